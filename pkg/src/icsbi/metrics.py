"""Evaluation harness: classifier two-sample test, simulation-based
calibration, energy score, predictive distance, and the distance-correlation
loss used for embedding pre-training.

All metrics are pure functions of their inputs; anything stochastic takes an
explicit seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.spatial.distance import cdist

from .data import derive_seed, standardize

__all__ = [
    "C2stResult",
    "SbcResult",
    "c2st",
    "knn_classifier",
    "sbc",
    "energy_score",
    "predictive_distance",
    "distance_correlation_loss",
]


@dataclass(frozen=True)
class C2stResult:
    """Cross-validated two-sample classification accuracy.

    0.5 means the two sample sets are indistinguishable; 1.0 means fully
    distinguishable.
    """

    accuracy: float
    folds: int
    classifier: str

    def __post_init__(self):
        if not 0.0 <= self.accuracy <= 1.0:
            raise ValueError("accuracy must lie in [0, 1]")


def knn_classifier(train_x: np.ndarray, train_y: np.ndarray, test_x: np.ndarray) -> np.ndarray:
    """Majority vote over the floor(sqrt(n_train)) nearest neighbors.

    Vote ties fall back to the single nearest neighbor's label, which keeps
    the rule symmetric under label swaps.
    """
    k = max(1, int(np.sqrt(train_x.shape[0])))
    dist = cdist(test_x, train_x)
    nn = np.argsort(dist, axis=1, kind="stable")[:, :k]
    votes = train_y[nn]
    mean_vote = votes.mean(axis=1)
    pred = np.where(mean_vote > 0.5, 1, 0)
    tie = mean_vote == 0.5
    pred[tie] = train_y[nn[tie, 0]]
    return pred


def c2st(
    samples_p: np.ndarray,
    samples_q: np.ndarray,
    folds: int = 5,
    seed: int = 0,
    classifier: Optional[Callable] = None,
) -> C2stResult:
    """K-fold cross-validated accuracy of a binary classifier on pooled samples.

    Both sets are pooled, labeled, and standardized with pooled statistics.
    The default classifier is a deterministic k-nearest-neighbor rule with
    k = floor(sqrt(n_train)); any callable ``(train_x, train_y, test_x) ->
    predicted labels`` can be substituted.
    """
    samples_p = np.atleast_2d(np.asarray(samples_p, dtype=float))
    samples_q = np.atleast_2d(np.asarray(samples_q, dtype=float))
    if samples_p.shape[0] == 0 or samples_q.shape[0] == 0:
        raise ValueError("both sample sets must be non-empty")
    if samples_p.shape[1] != samples_q.shape[1]:
        raise ValueError(
            f"dimensionality mismatch: {samples_p.shape[1]} vs {samples_q.shape[1]}"
        )
    clf = classifier if classifier is not None else knn_classifier
    pooled = np.vstack([samples_p, samples_q])
    labels = np.concatenate([np.zeros(len(samples_p), int), np.ones(len(samples_q), int)])
    pooled, _ = standardize(pooled)
    rng = np.random.default_rng(derive_seed(seed, 6))
    perm = rng.permutation(pooled.shape[0])
    pooled, labels = pooled[perm], labels[perm]
    fold_ids = np.arange(pooled.shape[0]) % folds
    correct = 0
    for f in range(folds):
        test = fold_ids == f
        pred = clf(pooled[~test], labels[~test], pooled[test])
        correct += int(np.sum(pred == labels[test]))
    name = getattr(clf, "__name__", type(clf).__name__)
    return C2stResult(accuracy=correct / pooled.shape[0], folds=folds, classifier=name)


@dataclass(frozen=True)
class SbcResult:
    """Ranks of the true parameters among posterior draws, plus curve summaries.

    ``curves`` holds, per parameter dimension, the empirical CDF of the
    (dithered) ranks at ``levels``; ``eod`` is the mean absolute deviation of
    the curves from the diagonal (0 = perfect calibration).
    """

    ranks: np.ndarray
    n_posterior_draws: int
    levels: np.ndarray
    curves: np.ndarray
    eod: float = field(init=False)

    def __post_init__(self):
        if np.any(self.ranks < 0) or np.any(self.ranks > self.n_posterior_draws):
            raise ValueError("ranks out of bounds")
        eod = float(np.mean(np.abs(self.curves - self.levels[None, :])))
        object.__setattr__(self, "eod", eod)


_SBC_LEVELS = 100


def sbc(
    prior_sampler: Callable[[int, np.random.Generator], np.ndarray],
    simulator: Callable[[np.ndarray, np.random.Generator], np.ndarray],
    posterior_sampler: Callable[[np.ndarray, int, int], np.ndarray],
    num_datasets: int,
    n_posterior_draws: int,
    seed: int = 0,
) -> SbcResult:
    """Simulation-based calibration over ``num_datasets`` synthetic observations.

    For each draw (theta*, x*), the rank of theta*_j among L posterior draws
    is recorded per dimension. Rank ties are broken by sub-resolution uniform
    jitter on the posterior draws, and the rank CDF is evaluated at 100
    evenly spaced credibility levels after uniform dithering of the discrete
    ranks (so a calibrated sampler yields exactly uniform rank variables).
    """
    if n_posterior_draws < 10:
        raise ValueError("need at least 10 posterior draws per dataset for usable ranks")
    rng = np.random.default_rng(derive_seed(seed, 7))
    all_ranks = []
    for i in range(num_datasets):
        theta_star = np.asarray(prior_sampler(1, rng), dtype=float).reshape(-1)
        x_star = np.asarray(simulator(theta_star, rng), dtype=float)
        draws = np.atleast_2d(
            np.asarray(posterior_sampler(x_star, n_posterior_draws, derive_seed(seed, 8, i)))
        )
        if draws.shape[0] != n_posterior_draws:
            raise ValueError("posterior_sampler returned the wrong number of draws")
        jitter_scale = 1e-9 * (1.0 + np.abs(draws).max())
        jittered = draws + rng.uniform(-jitter_scale, jitter_scale, size=draws.shape)
        all_ranks.append(np.sum(jittered < theta_star[None, :], axis=0))
    ranks = np.asarray(all_ranks)
    levels = (np.arange(1, _SBC_LEVELS + 1)) / _SBC_LEVELS
    # Dithered PIT: (rank + U[0,1)) / (L + 1) is exactly uniform when ranks are.
    u = (ranks + rng.random(ranks.shape)) / (n_posterior_draws + 1.0)
    curves = np.stack([np.mean(u[:, j, None] <= levels[None, :], axis=0) for j in range(u.shape[1])])
    return SbcResult(
        ranks=ranks, n_posterior_draws=n_posterior_draws, levels=levels, curves=curves
    )


def energy_score(predictive_samples: np.ndarray, x_o: np.ndarray) -> float:
    """mean ||s_i - x_o|| - 0.5 * mean_{i != j} ||s_i - s_j||.

    Inputs are used as given; standardize beforehand when a scale-free score
    is wanted.
    """
    samples = np.atleast_2d(np.asarray(predictive_samples, dtype=float))
    n = samples.shape[0]
    if n < 2:
        raise ValueError("energy score needs at least 2 samples")
    x_o = np.asarray(x_o, dtype=float).reshape(1, -1)
    term_obs = float(np.mean(np.linalg.norm(samples - x_o, axis=1)))
    pair = cdist(samples, samples)
    term_pair = float(pair.sum() / (n * (n - 1)))
    return term_obs - 0.5 * term_pair


def predictive_distance(predictive_samples: np.ndarray, x_o: np.ndarray, stats) -> float:
    """Mean Euclidean distance between standardized samples and observation."""
    samples = np.atleast_2d(np.asarray(predictive_samples, dtype=float))
    zs = stats.transform(samples)
    zo = stats.transform(np.asarray(x_o, dtype=float).reshape(1, -1))
    return float(np.mean(np.linalg.norm(zs - zo, axis=1)))


def distance_correlation_loss(
    thetas_a: np.ndarray,
    thetas_b: np.ndarray,
    embeddings_a: np.ndarray,
    embeddings_b: np.ndarray,
) -> float:
    """Alignment of pairwise parameter and embedding distances.

    L = E[d_theta * d_emb] / sqrt(E[d_theta^2] * E[d_emb^2]) over the paired
    batch; equals 1 exactly when embedding distances reproduce parameter
    distances (Cauchy-Schwarz equality). Raises if either distance batch is
    identically zero.
    """
    ta = np.atleast_2d(np.asarray(thetas_a, dtype=float))
    tb = np.atleast_2d(np.asarray(thetas_b, dtype=float))
    ea = np.atleast_2d(np.asarray(embeddings_a, dtype=float))
    eb = np.atleast_2d(np.asarray(embeddings_b, dtype=float))
    if ta.shape != tb.shape or ea.shape != eb.shape or ta.shape[0] != ea.shape[0]:
        raise ValueError("paired batches must have matching shapes")
    d_theta = np.linalg.norm(ta - tb, axis=1)
    d_emb = np.linalg.norm(ea - eb, axis=1)
    ms_theta = float(np.mean(d_theta**2))
    ms_emb = float(np.mean(d_emb**2))
    if ms_theta <= 0 or ms_emb <= 0:
        raise ValueError("zero-variance distances")
    return float(np.mean(d_theta * d_emb) / np.sqrt(ms_theta * ms_emb))
