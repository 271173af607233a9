import json

import numpy as np
import pytest

from icsbi.cli import main
from icsbi.data import load_dataset
from icsbi.experiment import (
    ConfigError,
    load_samples,
    read_matrix_csv,
    run_experiment,
    validate_config,
)


def base_config(**overrides):
    config = {
        "version": 1,
        "task": "two_moons",
        "budget": 200,
        "seeds": [1],
        "n_posterior_samples": 50,
        "metrics": ["posterior_mean"],
    }
    config.update(overrides)
    return config


class TestConfigValidation:
    def test_unknown_key_named(self):
        with pytest.raises(ConfigError, match="'bogus_key'"):
            validate_config(base_config(bogus_key=1))

    def test_missing_required(self):
        config = base_config()
        del config["task"]
        with pytest.raises(ConfigError, match="'task'"):
            validate_config(config)

    def test_version_pinned(self):
        with pytest.raises(ConfigError, match="version"):
            validate_config(base_config(version=99))

    def test_unknown_metric(self):
        with pytest.raises(ConfigError, match="unknown metric"):
            validate_config(base_config(metrics=["nonsense"]))

    def test_tsnpe_budget_divisibility(self):
        config = base_config(engine="tsnpe", tsnpe={"rounds": 3}, budget=100)
        with pytest.raises(ConfigError, match="divisible"):
            validate_config(config)

    def test_unknown_tsnpe_key(self):
        config = base_config(engine="tsnpe", tsnpe={"rounds": 2, "what": 1}, budget=100)
        with pytest.raises(ConfigError, match="'what'"):
            validate_config(config)

    def test_defaults_filled(self):
        config = validate_config(base_config())
        assert config["backend"] == "reference"
        assert config["n_filter"] == 10_000


class TestRunExperiment:
    def test_artifacts_written(self, tmp_path, backend):
        doc = run_experiment(base_config(), tmp_path / "out", backend=backend)
        assert doc["n_failures"] == 0
        out = tmp_path / "out"
        assert (out / "config.json").exists()
        assert (out / "observations.csv").exists()
        assert (out / "budget200" / "seed1" / "obs0" / "simulations.csv").exists()
        posterior = load_samples(out / "budget200" / "seed1" / "obs0" / "posterior.csv")
        assert posterior.shape == (50, 2)
        provenance = json.loads((out / "provenance.json").read_text())
        assert "content_hash" in provenance
        sims = load_dataset(out / "budget200" / "seed1" / "obs0" / "simulations.csv")
        assert len(sims) == 200

    def test_rerun_bit_identical_metrics(self, tmp_path, backend):
        config = base_config(metrics=["posterior_mean", "posterior_mean_error"], task="gaussian_linear")
        run_experiment(config, tmp_path / "a", backend=backend)
        run_experiment(config, tmp_path / "b", backend=backend)
        a = (tmp_path / "a" / "metrics.json").read_bytes()
        b = (tmp_path / "b" / "metrics.json").read_bytes()
        assert a == b
        ha = json.loads((tmp_path / "a" / "provenance.json").read_text())["content_hash"]
        hb = json.loads((tmp_path / "b" / "provenance.json").read_text())["content_hash"]
        assert ha == hb

    def test_metrics_recomputable_from_artifacts(self, tmp_path, backend):
        config = base_config(task="gaussian_linear", metrics=["posterior_mean"])
        doc = run_experiment(config, tmp_path / "out", backend=backend)
        posterior = load_samples(tmp_path / "out" / "budget200" / "seed1" / "obs0" / "posterior.csv")
        np.testing.assert_allclose(
            posterior.mean(axis=0), doc["cells"][0]["posterior_mean"], rtol=1e-12
        )

    def test_budget_sweep_cells(self, tmp_path, backend):
        # the benchmark protocol sweeps budgets; each (budget, seed, obs) is a cell
        config = base_config(budget=[100, 200], n_posterior_samples=20)
        doc = run_experiment(config, tmp_path / "sweep", backend=backend)
        assert doc["n_failures"] == 0
        assert [c["budget"] for c in doc["cells"]] == [100, 200]
        for b in (100, 200):
            sims = load_dataset(tmp_path / "sweep" / f"budget{b}" / "seed1" / "obs0" / "simulations.csv")
            assert len(sims) == b

    def test_tsnpe_engine_cells(self, tmp_path, backend):
        config = base_config(
            engine="tsnpe",
            budget=120,
            tsnpe={"rounds": 2, "ratio_size": 40, "alpha": 0.05},
        )
        doc = run_experiment(config, tmp_path / "out", backend=backend)
        assert doc["n_failures"] == 0
        rounds = json.loads((tmp_path / "out" / "budget120" / "seed1" / "obs0" / "rounds.json").read_text())
        assert len(rounds["rounds"]) == 2

    def test_cell_failure_leaves_manifest(self, tmp_path, backend):
        config = base_config(budget=2, n_posterior_samples=10)
        config["n_filter"] = 1
        # tiny budget with an absurd filter is fine; instead force failure via bad task name bypassing validation
        config["task"] = "two_moons"
        doc = run_experiment(config, tmp_path / "out", backend=backend)
        assert doc["n_failures"] == 0  # sanity: this config actually runs

        class ExplodingBackend:
            @property
            def capabilities(self):
                from icsbi.backends import BackendCapabilities

                return BackendCapabilities()

            def regress_predict(self, *a, **k):
                raise RuntimeError("boom")

            def classify_predict(self, *a, **k):
                raise RuntimeError("boom")

        doc = run_experiment(base_config(), tmp_path / "out2", backend=ExplodingBackend())
        assert doc["n_failures"] == 1
        manifest = json.loads((tmp_path / "out2" / "failures.json").read_text())
        assert manifest["failures"][0]["error"] == "boom"
        assert (tmp_path / "out2" / "metrics.json").exists()


class TestReadMatrixCsv:
    def test_reads_with_and_without_header(self, tmp_path):
        p1 = tmp_path / "a.csv"
        p1.write_text("x,y\n1.0,2.0\n3.0,4.0\n")
        p2 = tmp_path / "b.csv"
        p2.write_text("1.0,2.0\n3.0,4.0\n")
        np.testing.assert_array_equal(read_matrix_csv(p1), read_matrix_csv(p2))

    def test_inconsistent_width_names_line(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("1.0,2.0\n3.0\n")
        with pytest.raises(ValueError, match="line 2"):
            read_matrix_csv(p)


class TestCli:
    def test_simulate(self, tmp_path, capsys):
        out = tmp_path / "sims.csv"
        assert main(["simulate", "--task", "two_moons", "--n", "20", "--seed", "3", "--out", str(out)]) == 0
        ds = load_dataset(out)
        assert len(ds) == 20

    def test_infer_writes_samples_and_provenance(self, tmp_path):
        out = tmp_path / "inf"
        rc = main([
            "infer", "--task", "two_moons", "--sims", "150", "--samples", "40",
            "--seed", "5", "--out", str(out),
        ])
        assert rc == 0
        samples = load_samples(out / "posterior.csv")
        assert samples.shape == (40, 2)
        prov = json.loads((out / "provenance.json").read_text())
        assert prov["n_filter"] == 10_000
        assert prov["order"] == [0, 1]

    def test_infer_seq_rounds_json(self, tmp_path):
        out = tmp_path / "seq"
        rc = main([
            "infer-seq", "--task", "two_moons", "--rounds", "2", "--budget", "160",
            "--alpha", "0.05", "--ratio-size", "40", "--samples", "30",
            "--seed", "6", "--out", str(out),
        ])
        assert rc == 0
        rounds = json.loads((out / "rounds.json").read_text())["rounds"]
        assert [r["n_new"] for r in rounds] == [80, 80]

    def test_infer_seq_rejects_bad_budget(self, tmp_path):
        with pytest.raises(SystemExit):
            main(["infer-seq", "--task", "two_moons", "--rounds", "3", "--budget", "100"])

    def test_eval_c2st(self, tmp_path, capsys):
        rng = np.random.default_rng(0)
        a, b = tmp_path / "a.csv", tmp_path / "b.csv"
        from icsbi.experiment import save_samples

        save_samples(rng.standard_normal((300, 2)), a)
        save_samples(rng.standard_normal((300, 2)) + 5.0, b)
        rc = main(["eval", "c2st", "--samples-a", str(a), "--samples-b", str(b), "--seed", "1"])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["accuracy"] > 0.95

    def test_eval_energy_and_predictive(self, tmp_path, capsys):
        from icsbi.experiment import save_samples
        from icsbi.data import SimulationDataset, save_dataset

        rng = np.random.default_rng(1)
        s = tmp_path / "s.csv"
        save_samples(rng.standard_normal((100, 2)), s)
        rc = main(["eval", "energy", "--samples-a", str(s), "--observation", "0.0,0.0"])
        assert rc == 0
        assert "score" in json.loads(capsys.readouterr().out)

        sims = tmp_path / "sims.csv"
        save_dataset(
            SimulationDataset(thetas=rng.standard_normal((50, 1)), xs=rng.standard_normal((50, 2))),
            sims,
        )
        rc = main([
            "eval", "predictive", "--samples-a", str(s), "--observation", "0.0,0.0",
            "--stats-from", str(sims),
        ])
        assert rc == 0
        assert "distance" in json.loads(capsys.readouterr().out)

    def test_eval_sbc_small(self, tmp_path, capsys):
        rc = main([
            "eval", "sbc", "--task", "two_moons", "--sims", "60", "--datasets", "5",
            "--draws", "20", "--seed", "2",
        ])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert 0.0 <= doc["eod"] <= 1.0

    def test_density_report(self, tmp_path, capsys):
        rng = np.random.default_rng(2)
        data = tmp_path / "table.csv"
        np.savetxt(data, rng.standard_normal((300, 2)), delimiter=",")
        rc = main([
            "density", "--data", str(data), "--clusters", "2", "--train-size", "200",
            "--seed", "3",
        ])
        assert rc == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["clusters"] == 2 and np.isfinite(doc["nll"])

    def test_bridge_check_reference(self, capsys):
        assert main(["bridge-check", "--backend", "reference"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["regress_ok"] and doc["classify_ok"]

    def test_bridge_check_against_server(self, capsys):
        import sys as _sys

        cmd = f"bridge:{_sys.executable} -m icsbi.backends.server"
        assert main(["bridge-check", "--backend", cmd]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert doc["capabilities"]["max_context"] == 10_000

    def test_run_experiment_cli(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps(base_config(budget=100, n_posterior_samples=20)))
        out = tmp_path / "exp"
        assert main(["run", "--config", str(config), "--out", str(out)]) == 0
        assert (out / "metrics.json").exists()

    def test_run_rejects_bad_config_key(self, tmp_path):
        config = tmp_path / "config.json"
        config.write_text(json.dumps(base_config(oops=True)))
        with pytest.raises(ConfigError, match="'oops'"):
            main(["run", "--config", str(config), "--out", str(tmp_path / "x")])
