"""Unconditional density estimation with a conditional in-context backend.

A standard-normal synthetic column is prepended to the data so every real
dimension has something to condition on; the joint is then modeled by the
usual autoregressive chain. For larger datasets the space is partitioned by
k-means and each cluster gets its own estimator, giving the mixture
p(x) = sum_i p(x | c_i) p(c_i).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .backends.base import ContextSet, InContextBackend
from .data import derive_seed

__all__ = [
    "UnconditionalDensityModel",
    "PartitionModel",
    "MixtureDensityModel",
    "fit_unconditional",
    "kmeans_partition",
    "fit_mixture",
    "density_report",
]

_EVAL_NOISE_DRAWS = 8


class UnconditionalDensityModel:
    """Autoregressive density over d columns, chained off a noise column.

    The fit-time noise column is frozen (seeded); evaluation resamples the
    noise column fresh and averages the density over ``_EVAL_NOISE_DRAWS``
    draws, since no real dimension depends on the data through it.
    """

    def __init__(self, data: np.ndarray, seed: int, backend: InContextBackend):
        data = np.atleast_2d(np.asarray(data, dtype=float))
        if data.shape[0] < 2:
            raise ValueError("need at least 2 rows to fit a density")
        if not np.all(np.isfinite(data)):
            raise ValueError("non-finite training data")
        self.data = data
        self.seed = int(seed)
        self.backend = backend
        rng = np.random.default_rng(derive_seed(seed, 30))
        self._noise = rng.standard_normal(data.shape[0])

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def _context(self, k: int) -> ContextSet:
        feats = np.column_stack([self._noise, self.data[:, :k]])
        return ContextSet(features=feats, targets=self.data[:, k])

    def sample(self, n: int, seed: int = 0) -> np.ndarray:
        rng = np.random.default_rng(derive_seed(self.seed, 33, seed))
        noise = rng.standard_normal(n)
        out = np.empty((n, self.dim))
        for k in range(self.dim):
            queries = np.column_stack([noise, out[:, :k]])
            predictives = self.backend.regress_predict(self._context(k), queries)
            us = rng.random(n)
            out[:, k] = [p.quantile(u) for p, u in zip(predictives, us)]
        return out

    def log_density(self, points: np.ndarray, seed: int = 0) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = points.shape[0]
        rng = np.random.default_rng(derive_seed(self.seed, 32, seed))
        noise = rng.standard_normal((_EVAL_NOISE_DRAWS, n))
        # One backend call per dimension covers all noise draws at once.
        lp = np.zeros((_EVAL_NOISE_DRAWS, n))
        for k in range(self.dim):
            queries = np.column_stack(
                [noise.reshape(-1), np.tile(points[:, :k], (_EVAL_NOISE_DRAWS, 1))]
            )
            predictives = self.backend.regress_predict(self._context(k), queries)
            targets = np.tile(points[:, k], _EVAL_NOISE_DRAWS)
            vals = np.array([float(p.log_prob(t)) for p, t in zip(predictives, targets)])
            lp += vals.reshape(_EVAL_NOISE_DRAWS, n)
        return logsumexp(lp, axis=0) - np.log(_EVAL_NOISE_DRAWS)


def fit_unconditional(data: np.ndarray, seed: int, backend: InContextBackend) -> UnconditionalDensityModel:
    return UnconditionalDensityModel(data, seed, backend)


@dataclass(frozen=True)
class PartitionModel:
    """k-means partition: assignments, centroids, and cluster weights n_i/N."""

    assignments: np.ndarray
    centroids: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        weights = np.asarray(self.weights, dtype=float)
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-12:
            raise ValueError("cluster weights must be non-negative and sum to 1")

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def cluster_indices(self, i: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == i)

    def assign(self, points: np.ndarray) -> np.ndarray:
        points = np.atleast_2d(points)
        d2 = ((points[:, None, :] - self.centroids[None, :, :]) ** 2).sum(axis=2)
        return np.argmin(d2, axis=1)


def _kmeanspp_init(data: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = data.shape[0]
    centroids = np.empty((k, data.shape[1]))
    centroids[0] = data[rng.integers(n)]
    d2 = ((data - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[i] = data[rng.integers(n)]
            continue
        centroids[i] = data[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, ((data - centroids[i]) ** 2).sum(axis=1))
    return centroids


def kmeans_partition(data: np.ndarray, k: int, seed: int = 0, max_iter: int = 100) -> PartitionModel:
    """Lloyd's algorithm with k-means++ seeding.

    Converges when assignments stop changing (or after ``max_iter`` sweeps);
    a cluster that empties is re-seeded at the point farthest from its
    assigned centroid.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n = data.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}]")
    rng = np.random.default_rng(derive_seed(seed, 34))
    centroids = _kmeanspp_init(data, k, rng)
    assignments = np.full(n, -1)
    for _ in range(max_iter):
        d2 = ((data[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(d2, axis=1)
        for i in range(k):
            members = new_assign == i
            if not np.any(members):
                far = np.argmax(d2[np.arange(n), new_assign])
                centroids[i] = data[far]
                new_assign[far] = i
                members = new_assign == i
            centroids[i] = data[members].mean(axis=0)
        if np.array_equal(new_assign, assignments):
            break
        assignments = new_assign
    weights = np.bincount(assignments, minlength=k) / n
    return PartitionModel(assignments=assignments, centroids=centroids, weights=weights)


class MixtureDensityModel:
    """Cluster-partitioned density: p(x) = sum_i p(x | c_i) p(c_i)."""

    def __init__(self, partition: PartitionModel, models: list[UnconditionalDensityModel]):
        if partition.k != len(models):
            raise ValueError("one estimator per cluster required")
        self.partition = partition
        self.models = models

    @property
    def weights(self) -> np.ndarray:
        return self.partition.weights

    def log_density(self, points: np.ndarray, seed: int = 0) -> np.ndarray:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        per_cluster = np.stack(
            [m.log_density(points, seed=seed) for m in self.models]
        )  # (k, n)
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)[:, None]
        return logsumexp(per_cluster + logw, axis=0)

    def sample(self, n: int, seed: int = 0, return_components: bool = False):
        rng = np.random.default_rng(derive_seed(seed, 35))
        counts = rng.multinomial(n, self.weights)
        parts, comps = [], []
        for i, (m, c) in enumerate(zip(self.models, counts)):
            if c == 0:
                continue
            parts.append(m.sample(int(c), seed=seed))
            comps.append(np.full(int(c), i))
        samples = np.vstack(parts)
        components = np.concatenate(comps)
        order = rng.permutation(n)
        if return_components:
            return samples[order], components[order]
        return samples[order]


def fit_mixture(data: np.ndarray, k: int, seed: int, backend: InContextBackend) -> MixtureDensityModel:
    """Partition with k-means, then fit one autoregressive estimator per cluster.

    Cluster i reuses seed + i, so k = 1 reproduces ``fit_unconditional(data,
    seed, backend)`` exactly.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    partition = kmeans_partition(data, k, seed=seed)
    models = [
        fit_unconditional(data[partition.cluster_indices(i)], seed + i, backend)
        for i in range(k)
    ]
    return MixtureDensityModel(partition, models)


def density_report(
    data: np.ndarray, clusters: int, train_size: int, seed: int, backend: InContextBackend
) -> dict:
    """Train on a seeded subset, report held-out negative log-likelihood."""
    data = np.atleast_2d(np.asarray(data, dtype=float))
    if not 2 <= train_size < data.shape[0]:
        raise ValueError("train_size must leave a non-empty held-out set")
    rng = np.random.default_rng(derive_seed(seed, 36))
    perm = rng.permutation(data.shape[0])
    train, test = data[perm[:train_size]], data[perm[train_size:]]
    model = fit_mixture(train, clusters, seed, backend)
    nll = -float(np.mean(model.log_density(test, seed=seed)))
    return {
        "n_train": int(train_size),
        "n_test": int(test.shape[0]),
        "dim": int(data.shape[1]),
        "clusters": int(clusters),
        "cluster_weights": model.weights.tolist(),
        "nll": nll,
    }
