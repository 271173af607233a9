"""Command-line front end.

Subcommands: ``simulate``, ``infer``, ``infer-seq``, ``eval``, ``density``,
``bridge-check``, and ``run`` (config-driven experiment). Every command takes
an explicit ``--seed`` and writes machine-readable artifacts (CSV/JSON);
figure generation is left to downstream scripts. Exit code 0 iff everything
succeeded.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .backends import make_backend
from .data import load_dataset, save_dataset
from .engine import FilterConfig, npe_sample
from .experiment import (
    load_samples,
    read_matrix_csv,
    run_experiment,
    save_samples,
)
from .metrics import c2st, energy_score, predictive_distance, sbc
from .sequential import TsnpeConfig, TsnpeRoundError, run_tsnpe
from .tasks import get_task, sample_joint, task_names
from .unconditional import density_report

__all__ = ["main"]


def _parse_vector(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")])


def _emit(doc: dict, out) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True)
    if out:
        Path(out).write_text(text + "\n")
    else:
        print(text)


def _add_common(parser, backend=True):
    parser.add_argument("--seed", type=int, default=0, help="root seed (all randomness derives from it)")
    parser.add_argument("--out", help="output path (directory or file depending on command)")
    if backend:
        parser.add_argument(
            "--backend",
            default="reference",
            help="'reference' or 'bridge:<command>' / 'bridge:tcp:<host>:<port>'",
        )


def _resolve_observation(args, task, rng):
    if args.x_obs is not None:
        x_o = _parse_vector(args.x_obs)
        if x_o.shape[0] != task.d_x:
            raise SystemExit(f"--x-obs has {x_o.shape[0]} values, task emits {task.d_x}")
        return x_o
    theta = task.prior.sample(1, rng)[0]
    return task.simulate(theta, rng)


def cmd_simulate(args) -> int:
    task = get_task(args.task)
    dataset = sample_joint(task, args.n, args.seed)
    out = args.out or f"{args.task}_sims.csv"
    save_dataset(dataset, out)
    print(f"wrote {len(dataset)} simulations to {out}")
    return 0


def cmd_infer(args) -> int:
    task = get_task(args.task)
    backend = make_backend(args.backend)
    rng = np.random.default_rng(args.seed)
    x_o = _resolve_observation(args, task, rng)
    dataset = sample_joint(task, args.sims, args.seed)
    posterior = npe_sample(
        dataset,
        x_o,
        args.samples,
        backend,
        filter_config=FilterConfig(n_filter=args.filter),
        order=args.order,
        seed=args.seed,
        provenance={"task": task.name, "n_sims": args.sims},
    )
    out_dir = Path(args.out or f"{args.task}_infer")
    out_dir.mkdir(parents=True, exist_ok=True)
    save_samples(posterior.samples, out_dir / "posterior.csv")
    (out_dir / "provenance.json").write_text(
        json.dumps(posterior.provenance, indent=2, sort_keys=True) + "\n"
    )
    print(f"wrote {len(posterior)} posterior samples to {out_dir}")
    return 0


def cmd_infer_seq(args) -> int:
    task = get_task(args.task)
    backend = make_backend(args.backend)
    rng = np.random.default_rng(args.seed)
    x_o = _resolve_observation(args, task, rng)
    if args.budget % args.rounds != 0:
        raise SystemExit(f"budget {args.budget} is not divisible into {args.rounds} rounds")
    mode, oversample = "rejection", 10
    if args.mode.startswith("sir"):
        mode = "sir"
        if ":" in args.mode:
            oversample = int(args.mode.split(":", 1)[1])
    elif args.mode != "rejection":
        raise SystemExit("--mode must be 'rejection' or 'sir[:K]'")
    config = TsnpeConfig(
        rounds=args.rounds,
        sims_per_round=args.budget // args.rounds,
        alpha=args.alpha,
        ratio_size=args.ratio_size,
        proposal_mode=mode,
        sir_oversample=oversample,
        validity_threshold=args.restricted,
    )
    out_dir = Path(args.out or f"{args.task}_tsnpe")
    out_dir.mkdir(parents=True, exist_ok=True)
    try:
        result = run_tsnpe(
            task, config, x_o, backend, seed=args.seed, n_posterior_samples=args.samples
        )
    except TsnpeRoundError as exc:
        save_dataset(exc.dataset, out_dir / "simulations.csv")
        _emit({"rounds": exc.completed_rounds, "failed": str(exc)}, out_dir / "rounds.json")
        print(f"aborted: {exc}", file=sys.stderr)
        return 1
    save_dataset(result.dataset, out_dir / "simulations.csv")
    save_samples(result.posterior.samples, out_dir / "posterior.csv")
    _emit({"rounds": result.rounds}, out_dir / "rounds.json")
    print(f"completed {args.rounds} rounds; artifacts in {out_dir}")
    return 0


def cmd_eval(args) -> int:
    if args.metric == "c2st":
        res = c2st(load_samples(args.samples_a), load_samples(args.samples_b), seed=args.seed)
        doc = {"metric": "c2st", "accuracy": res.accuracy, "folds": res.folds,
               "classifier": res.classifier}
    elif args.metric == "energy":
        doc = {
            "metric": "energy",
            "score": energy_score(load_samples(args.samples_a), _parse_vector(args.observation)),
        }
    elif args.metric == "predictive":
        stats = load_dataset(args.stats_from).x_standardization()
        doc = {
            "metric": "predictive",
            "distance": predictive_distance(
                load_samples(args.samples_a), _parse_vector(args.observation), stats
            ),
        }
    else:  # sbc
        task = get_task(args.task)
        backend = make_backend(args.backend)

        def posterior_sampler(x_o, n, seed):
            dataset = sample_joint(task, args.sims, seed)
            return npe_sample(dataset, x_o, n, backend, seed=seed).samples

        res = sbc(
            task.prior.sample,
            task.simulate,
            posterior_sampler,
            num_datasets=args.datasets,
            n_posterior_draws=args.draws,
            seed=args.seed,
        )
        doc = {
            "metric": "sbc",
            "eod": res.eod,
            "num_datasets": args.datasets,
            "n_posterior_draws": args.draws,
            "task": args.task,
        }
    _emit(doc, args.out)
    return 0


def cmd_density(args) -> int:
    data = read_matrix_csv(args.data)
    backend = make_backend(args.backend)
    report = density_report(
        data, clusters=args.clusters, train_size=args.train_size, seed=args.seed, backend=backend
    )
    report["data"] = str(args.data)
    _emit(report, args.out)
    return 0


def cmd_bridge_check(args) -> int:
    backend = make_backend(args.backend)
    caps = backend.capabilities
    from .backends.base import ContextSet

    rng = np.random.default_rng(args.seed)
    feats = rng.standard_normal((8, 2))
    preds = backend.regress_predict(ContextSet(features=feats, targets=feats[:, 0]), feats[:2])
    labels, probs = backend.classify_predict(
        ContextSet(features=feats, targets=(feats[:, 0] > 0).astype(float)), feats[:2]
    )
    doc = {
        "backend": args.backend,
        "capabilities": {"max_context": caps.max_context, "max_features": caps.max_features},
        "regress_ok": len(preds) == 2,
        "classify_ok": probs.shape == (2, len(labels)),
    }
    if hasattr(backend, "shutdown"):
        backend.shutdown()
    _emit(doc, args.out)
    return 0


def cmd_run(args) -> int:
    config = json.loads(Path(args.config).read_text())
    doc = run_experiment(config, args.out or "experiment_out")
    print(json.dumps({"cells": len(doc["cells"]), "n_failures": doc["n_failures"]}))
    return 0 if doc["n_failures"] == 0 else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="icsbi",
        description="Training-free simulation-based inference with in-context backends",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="draw (theta, x) pairs from a task")
    p.add_argument("--task", required=True, choices=task_names())
    p.add_argument("--n", type=int, required=True)
    _add_common(p, backend=False)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("infer", help="amortized posterior sampling for one observation")
    p.add_argument("--task", required=True, choices=task_names())
    p.add_argument("--sims", type=int, required=True)
    p.add_argument("--filter", type=int, default=10_000, help="relevance-filter context budget")
    p.add_argument("--samples", type=int, default=1_000)
    p.add_argument("--order", default="default", help="'default' or 'random:<seed>'")
    p.add_argument("--x-obs", help="comma-separated observation (default: simulate one)")
    _add_common(p)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("infer-seq", help="truncated sequential inference")
    p.add_argument("--task", required=True, choices=task_names())
    p.add_argument("--rounds", type=int, default=10)
    p.add_argument("--budget", type=int, required=True)
    p.add_argument("--alpha", type=float, default=1e-3)
    p.add_argument("--mode", default="rejection", help="'rejection' or 'sir[:K]'")
    p.add_argument("--restricted", type=float, default=None,
                   help="validity threshold c for the restricted prior")
    p.add_argument("--ratio-size", type=int, default=5_000)
    p.add_argument("--samples", type=int, default=1_000)
    p.add_argument("--x-obs", help="comma-separated observation (default: simulate one)")
    _add_common(p)
    p.set_defaults(func=cmd_infer_seq)

    p = sub.add_parser("eval", help="metrics over persisted sample files")
    p.add_argument("metric", choices=["c2st", "sbc", "energy", "predictive"])
    p.add_argument("--samples-a", help="CSV of samples (first set)")
    p.add_argument("--samples-b", help="CSV of samples (second set, c2st only)")
    p.add_argument("--observation", help="comma-separated observation vector")
    p.add_argument("--stats-from", help="simulations CSV supplying standardization stats")
    p.add_argument("--task", choices=task_names(), help="task (sbc only)")
    p.add_argument("--sims", type=int, default=500, help="simulations per SBC posterior")
    p.add_argument("--datasets", type=int, default=100)
    p.add_argument("--draws", type=int, default=100)
    _add_common(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("density", help="unconditional density estimation NLL report")
    p.add_argument("--data", required=True, help="numeric CSV table")
    p.add_argument("--clusters", type=int, default=1)
    p.add_argument("--train-size", type=int, required=True)
    _add_common(p)
    p.set_defaults(func=cmd_density)

    p = sub.add_parser("bridge-check", help="handshake and contract round trip")
    _add_common(p)
    p.set_defaults(func=cmd_bridge_check)

    p = sub.add_parser("run", help="config-driven experiment")
    p.add_argument("--config", required=True, help="experiment config JSON")
    _add_common(p, backend=False)
    p.set_defaults(func=cmd_run)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
