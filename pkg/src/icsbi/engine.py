"""Amortized posterior inference: relevance filtering plus autoregressive
sampling and log-density evaluation against an in-context backend.

The posterior over a multivariate parameter is factorized into a chain of
1-D conditionals in a fixed dimension order. For chain step j the backend
context targets the j-th parameter column and its features are the
already-drawn dimensions (in chain order) followed by the observation
features; all pending samples advance one step per backend call.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .backends.base import ContextSet, InContextBackend
from .data import SimulationDataset, StandardizationStats, derive_seed

__all__ = [
    "FilterConfig",
    "PosteriorSampleSet",
    "filter_context",
    "resolve_order",
    "sample_posterior",
    "log_prob_autoregressive",
    "npe_sample",
]

DEFAULT_N_FILTER = 10_000


@dataclass(frozen=True)
class FilterConfig:
    """Context budget for relevance filtering (Euclidean on standardized features)."""

    n_filter: int = DEFAULT_N_FILTER

    def __post_init__(self):
        if self.n_filter < 1:
            raise ValueError("n_filter must be >= 1")


@dataclass(frozen=True)
class PosteriorSampleSet:
    """Posterior draws plus the provenance needed to reproduce them."""

    samples: np.ndarray
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if not np.all(np.isfinite(samples)):
            raise ValueError("posterior samples must be finite")
        samples.setflags(write=False)
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.shape[0]

    def mean(self) -> np.ndarray:
        return self.samples.mean(axis=0)


def filter_context(
    dataset: SimulationDataset,
    x_o: np.ndarray,
    config: FilterConfig = FilterConfig(),
    stats: Optional[StandardizationStats] = None,
) -> SimulationDataset:
    """Keep the ``n_filter`` rows closest to ``x_o``; invalid rows never qualify.

    Distances are Euclidean after standardizing features with full-dataset
    statistics (computed over valid rows); ``x_o`` is transformed with the
    same statistics. Ties at the cutoff break toward the lower row index, and
    the selected rows keep their original order. With ``n_filter >= N`` the
    dataset is returned unchanged.
    """
    if len(dataset) == 0 or dataset.n_valid == 0:
        raise ValueError("empty dataset")
    if config.n_filter >= dataset.n_valid and dataset.n_valid == len(dataset):
        return dataset
    valid_idx = np.flatnonzero(dataset.valid_mask)
    if config.n_filter >= valid_idx.size:
        return dataset.subset(valid_idx)
    if stats is None:
        stats = dataset.x_standardization()
    z = stats.transform(dataset.xs[valid_idx])
    zo = stats.transform(np.asarray(x_o, dtype=float))
    dist = np.sqrt(np.sum((z - zo) ** 2, axis=1))
    # Stable argsort breaks distance ties by lower row index.
    keep = np.sort(valid_idx[np.argsort(dist, kind="stable")[: config.n_filter]])
    return dataset.subset(keep)


def resolve_order(order, d_theta: int) -> np.ndarray:
    """Normalize an order spec: None/"default", "random:<seed>", or a permutation."""
    if order is None or (isinstance(order, str) and order == "default"):
        return np.arange(d_theta)
    if isinstance(order, str):
        if order.startswith("random:"):
            rng = np.random.default_rng(int(order.split(":", 1)[1]))
            return rng.permutation(d_theta)
        raise ValueError(f"unrecognized order spec {order!r}")
    perm = np.asarray(order, dtype=int)
    if sorted(perm.tolist()) != list(range(d_theta)):
        raise ValueError(f"order {perm} is not a permutation of 0..{d_theta - 1}")
    return perm


def _check_capacity(backend: InContextBackend, d_x: int, d_theta: int) -> None:
    needed = d_x + d_theta - 1
    if needed > backend.capabilities.max_features:
        warnings.warn(
            f"autoregressive features ({needed}) exceed backend soft limit "
            f"{backend.capabilities.max_features}",
            stacklevel=3,
        )


def sample_posterior(
    dataset: SimulationDataset,
    x_o: np.ndarray,
    n_samples: int,
    backend: InContextBackend,
    order=None,
    seed: int = 0,
    provenance: Optional[dict] = None,
) -> PosteriorSampleSet:
    """Draw posterior samples by chaining 1-D backend predictives over dimensions.

    The context ``dataset`` is used as-is (apply :func:`filter_context`
    beforehand, or use :func:`npe_sample` for the full pipeline). Each chain
    step issues one backend call carrying all pending samples as query rows.
    """
    ctx = dataset.valid_subset()
    if len(ctx) == 0:
        raise ValueError("empty dataset")
    x_o = np.asarray(x_o, dtype=float).reshape(-1)
    perm = resolve_order(order, ctx.d_theta)
    _check_capacity(backend, ctx.d_x, ctx.d_theta)
    rng = np.random.default_rng(derive_seed(seed, 2))
    drawn = np.empty((n_samples, ctx.d_theta))
    for step, j in enumerate(perm):
        feats = np.hstack([ctx.thetas[:, perm[:step]], ctx.xs])
        context = ContextSet(features=feats, targets=ctx.thetas[:, j])
        queries = np.hstack([drawn[:, perm[:step]], np.tile(x_o, (n_samples, 1))])
        predictives = backend.regress_predict(
            context, queries, seed=derive_seed(seed, 3, step)
        )
        us = rng.random(n_samples)
        drawn[:, j] = [pred.quantile(u) for pred, u in zip(predictives, us)]
    info = dict(provenance or {})
    info.update(
        x_o=x_o.tolist(),
        order=perm.tolist(),
        seed=int(seed),
        n_context=len(ctx),
    )
    return PosteriorSampleSet(samples=drawn, provenance=info)


def log_prob_autoregressive(
    dataset: SimulationDataset,
    x_o: np.ndarray,
    thetas: np.ndarray,
    backend: InContextBackend,
    order=None,
) -> np.ndarray:
    """Sum of chained conditional log-densities at each of the given points.

    Conditionals are read off the backend's predictive grid by linear
    interpolation in log space; a point outside every grid support yields
    ``-inf`` (with a warning).
    """
    ctx = dataset.valid_subset()
    if len(ctx) == 0:
        raise ValueError("empty dataset")
    x_o = np.asarray(x_o, dtype=float).reshape(-1)
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    perm = resolve_order(order, ctx.d_theta)
    _check_capacity(backend, ctx.d_x, ctx.d_theta)
    n_points = thetas.shape[0]
    total = np.zeros(n_points)
    for step, j in enumerate(perm):
        feats = np.hstack([ctx.thetas[:, perm[:step]], ctx.xs])
        context = ContextSet(features=feats, targets=ctx.thetas[:, j])
        queries = np.hstack([thetas[:, perm[:step]], np.tile(x_o, (n_points, 1))])
        predictives = backend.regress_predict(context, queries)
        total += np.array(
            [float(pred.log_prob(t)) for pred, t in zip(predictives, thetas[:, j])]
        )
    n_off = int(np.sum(~np.isfinite(total)))
    if n_off:
        warnings.warn(f"{n_off} point(s) fell outside the predictive grid support")
    return total


def npe_sample(
    dataset: SimulationDataset,
    x_o: np.ndarray,
    n_samples: int,
    backend: InContextBackend,
    filter_config: FilterConfig = FilterConfig(),
    order=None,
    seed: int = 0,
    provenance: Optional[dict] = None,
) -> PosteriorSampleSet:
    """Full amortized pipeline: relevance-filter the dataset, then sample."""
    context = filter_context(dataset, x_o, filter_config)
    info = dict(provenance or {})
    info["n_filter"] = filter_config.n_filter
    return sample_posterior(
        context, x_o, n_samples, backend, order=order, seed=seed, provenance=info
    )
