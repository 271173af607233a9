"""Config-driven experiment pipelines with full artifact persistence.

A JSON config (versioned schema, unknown keys rejected) names a task, a
budget, seeds, and an engine; ``run_experiment`` materializes per-cell
simulation and posterior-sample CSVs plus one metrics JSON, and a provenance
record carrying the config and a content hash of every artifact. Reruns with
the same config and seeds are bit-identical on the reference backend.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .backends import make_backend
from .data import derive_seed, save_dataset
from .engine import FilterConfig, npe_sample
from .metrics import c2st
from .sequential import TsnpeConfig, TsnpeRoundError, run_tsnpe
from .tasks import get_task, sample_joint

__all__ = [
    "CONFIG_VERSION",
    "ConfigError",
    "validate_config",
    "run_experiment",
    "save_samples",
    "load_samples",
    "read_matrix_csv",
]

CONFIG_VERSION = 1

_TOP_KEYS = {
    "version": int,
    "task": str,
    "budget": (int, list),
    "seeds": list,
    "backend": str,
    "engine": str,
    "n_filter": int,
    "n_posterior_samples": int,
    "n_observations": int,
    "observation_seed": int,
    "order": (str, list),
    "metrics": list,
    "tsnpe": dict,
}
_TSNPE_KEYS = {
    "rounds": int,
    "alpha": float,
    "ratio_size": int,
    "proposal_mode": str,
    "sir_oversample": int,
    "validity_threshold": float,
    "first_round_sims": int,
}
_METRIC_NAMES = {"posterior_mean", "posterior_mean_error", "c2st_vs_oracle"}

_DEFAULTS = {
    "backend": "reference",
    "engine": "npe",
    "n_filter": 10_000,
    "n_posterior_samples": 1_000,
    "n_observations": 1,
    "observation_seed": 1234,
    "order": "default",
    "metrics": ["posterior_mean", "posterior_mean_error"],
}


class ConfigError(ValueError):
    pass


def validate_config(raw: dict) -> dict:
    """Normalize and validate a config dict; unknown keys are rejected by name."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    for key in raw:
        if key not in _TOP_KEYS:
            raise ConfigError(f"unknown config key {key!r}")
    for key in ("version", "task", "budget", "seeds"):
        if key not in raw:
            raise ConfigError(f"missing required config key {key!r}")
    if raw["version"] != CONFIG_VERSION:
        raise ConfigError(f"unsupported config version {raw['version']!r} (expected {CONFIG_VERSION})")
    config = dict(_DEFAULTS)
    config.update(raw)
    for key, expected in _TOP_KEYS.items():
        if key in config and not isinstance(config[key], expected):
            if expected is float and isinstance(config[key], int):
                config[key] = float(config[key])
            else:
                raise ConfigError(f"config key {key!r} has wrong type")
    budgets = config["budget"] if isinstance(config["budget"], list) else [config["budget"]]
    if not budgets or not all(isinstance(b, int) and b >= 1 for b in budgets):
        raise ConfigError("budget must be a positive integer or a list of them")
    if not config["seeds"] or not all(isinstance(s, int) for s in config["seeds"]):
        raise ConfigError("seeds must be a non-empty list of integers")
    unknown_metrics = set(config["metrics"]) - _METRIC_NAMES
    if unknown_metrics:
        raise ConfigError(f"unknown metric(s) {sorted(unknown_metrics)!r}")
    if config["engine"] not in ("npe", "tsnpe"):
        raise ConfigError("engine must be 'npe' or 'tsnpe'")
    if config["engine"] == "tsnpe":
        tsnpe = config.get("tsnpe", {})
        for key in tsnpe:
            if key not in _TSNPE_KEYS:
                raise ConfigError(f"unknown tsnpe config key {key!r}")
        rounds = tsnpe.get("rounds", 10)
        for budget in budgets:
            if budget % rounds != 0:
                raise ConfigError(f"budget {budget} not divisible into {rounds} rounds")
    return config


def save_samples(samples: np.ndarray, path) -> None:
    samples = np.atleast_2d(samples)
    header = ",".join(f"theta_{j}" for j in range(samples.shape[1]))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for row in samples:
            fh.write(",".join("%.17g" % v for v in row) + "\n")


def load_samples(path) -> np.ndarray:
    return read_matrix_csv(path)


def read_matrix_csv(path) -> np.ndarray:
    """Read a numeric CSV table, tolerating one optional header line."""
    with open(path) as fh:
        lines = [ln for ln in fh.read().splitlines() if ln.strip()]
    if not lines:
        raise ValueError(f"{path}: empty file")
    start = 0
    try:
        [float(c) for c in lines[0].split(",")]
    except ValueError:
        start = 1
    rows = []
    for lineno, line in enumerate(lines[start:], start=start + 1):
        cells = line.split(",")
        try:
            rows.append([float(c) for c in cells])
        except ValueError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from None
        if len(rows[-1]) != len(rows[0]):
            raise ValueError(f"{path}: line {lineno}: inconsistent width")
    return np.asarray(rows)


def _content_hash(paths: list[Path]) -> str:
    digest = hashlib.sha256()
    for path in sorted(paths):
        digest.update(path.name.encode())
        digest.update(path.read_bytes())
    return digest.hexdigest()


def _write_json(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n")


def _cell_metrics(config, task, x_o, posterior, obs_dir, seed):
    record = {}
    wanted = set(config["metrics"])
    if "posterior_mean" in wanted:
        record["posterior_mean"] = posterior.mean().tolist()
    oracle = task.analytic_posterior
    if "posterior_mean_error" in wanted and oracle is not None and hasattr(oracle, "mean"):
        err = posterior.mean() - oracle.mean(x_o)
        record["posterior_mean_error"] = float(np.linalg.norm(err))
    if "c2st_vs_oracle" in wanted and oracle is not None and hasattr(oracle, "sample"):
        rng = np.random.default_rng(derive_seed(seed, 40))
        oracle_samples = oracle.sample(x_o, len(posterior), rng)
        save_samples(oracle_samples, obs_dir / "oracle.csv")
        record["c2st_vs_oracle"] = c2st(posterior.samples, oracle_samples, seed=seed).accuracy
    return record


def run_experiment(raw_config: dict, out_dir, backend=None) -> dict:
    """Run every (seed, observation) cell; returns the metrics document.

    Partial failures leave completed artifacts in place plus a failure
    manifest; the metrics document lists per-cell status.
    """
    config = validate_config(raw_config)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(config, out / "config.json")
    if backend is None:
        backend = make_backend(config["backend"])
    task = get_task(config["task"])

    obs_rng = np.random.default_rng(derive_seed(config["observation_seed"], 41))
    true_thetas = task.prior.sample(config["n_observations"], obs_rng)
    observations = task.simulate_batch(true_thetas, obs_rng)
    save_samples(true_thetas, out / "true_parameters.csv")
    save_samples(observations, out / "observations.csv")

    budgets = config["budget"] if isinstance(config["budget"], list) else [config["budget"]]
    cells = []
    failures = []
    for budget in budgets:
        for seed in config["seeds"]:
            for obs_idx in range(config["n_observations"]):
                cell_dir = out / f"budget{budget}" / f"seed{seed}" / f"obs{obs_idx}"
                cell_dir.mkdir(parents=True, exist_ok=True)
                x_o = observations[obs_idx]
                try:
                    cells.append(
                        _run_cell(config, task, x_o, seed, obs_idx, budget, cell_dir, backend)
                    )
                except Exception as exc:  # cell isolation: persist and continue
                    failures.append(
                        {"budget": budget, "seed": seed, "observation": obs_idx, "error": str(exc)}
                    )
    metrics_doc = {
        "schema_version": CONFIG_VERSION,
        "task": config["task"],
        "engine": config["engine"],
        "budget": config["budget"],
        "cells": cells,
        "n_failures": len(failures),
    }
    _write_json(metrics_doc, out / "metrics.json")
    if failures:
        _write_json({"failures": failures}, out / "failures.json")
    artifacts = [p for p in out.rglob("*") if p.is_file() and p.name != "provenance.json"]
    provenance = {
        "config": config,
        "content_hash": _content_hash(artifacts),
        "artifact_count": len(artifacts),
    }
    _write_json(provenance, out / "provenance.json")
    return metrics_doc


def _run_cell(config, task, x_o, seed, obs_idx, budget, cell_dir, backend):
    filter_config = FilterConfig(n_filter=config["n_filter"])
    if config["engine"] == "npe":
        dataset = sample_joint(task, budget, derive_seed(seed, 42, obs_idx, budget))
        posterior = npe_sample(
            dataset,
            x_o,
            config["n_posterior_samples"],
            backend,
            filter_config=filter_config,
            order=config["order"],
            seed=derive_seed(seed, 43, obs_idx, budget),
            provenance={"task": task.name},
        )
        rounds = None
    else:
        tsnpe_raw = dict(config.get("tsnpe", {}))
        rounds_n = tsnpe_raw.pop("rounds", 10)
        tsnpe_config = TsnpeConfig(
            rounds=rounds_n,
            sims_per_round=budget // rounds_n,
            n_filter=config["n_filter"],
            **tsnpe_raw,
        )
        try:
            result = run_tsnpe(
                task,
                tsnpe_config,
                x_o,
                backend,
                seed=derive_seed(seed, 44, obs_idx, budget),
                n_posterior_samples=config["n_posterior_samples"],
                order=config["order"],
            )
        except TsnpeRoundError as exc:
            save_dataset(exc.dataset, cell_dir / "simulations.csv")
            _write_json({"rounds": exc.completed_rounds}, cell_dir / "rounds.json")
            raise
        dataset, posterior, rounds = result.dataset, result.posterior, result.rounds
    save_dataset(dataset, cell_dir / "simulations.csv")
    save_samples(posterior.samples, cell_dir / "posterior.csv")
    if rounds is not None:
        _write_json({"rounds": rounds}, cell_dir / "rounds.json")
    record = {"budget": budget, "seed": seed, "observation": obs_idx, "status": "ok"}
    record.update(_cell_metrics(config, task, x_o, posterior, cell_dir, seed))
    return record
