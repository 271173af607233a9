"""Self-contained in-context backend: kernel-local conditional density estimation.

Regression: Gaussian feature weights on standardized features select a local
sample; a weighted ridge-polynomial fit supplies the conditional mean and the
predictive density is a weighted KDE of the detrended targets recentered at
the local fit (piecewise grid output, like a binned predictive head).

Classification: the same feature weighting drives a local quadratic-logistic
fit per query (weighted IRLS on [offset, offset^2] features); the predicted
probability is the fitted log-odds at the query, shrunk toward 1/2 by a
Laplace-style pseudocount so probabilities stay strictly inside (0, 1) for
the ratio trick.

Everything is deterministic given (context, queries); the ``seed`` argument
is accepted for interface parity and ignored.
"""

from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.ndimage import gaussian_filter1d
from scipy.spatial.distance import cdist

from .base import (
    DEFAULT_GRID_SIZE,
    BackendCapabilities,
    ContextSet,
    InContextBackend,
    PredictiveDistribution1D,
    check_query_shape,
    class_labels,
)

__all__ = ["ReferenceBackend"]

_MEDIAN_SUBSAMPLE = 1024
_INTERACTION_FEATURE_LIMIT = 5
_QUADRATIC_FEATURE_LIMIT = 8


def _poly_design(z: np.ndarray) -> np.ndarray:
    """Local regression design: [1, z], plus squares (d <= 8) and pairwise
    interactions (d <= 5)."""
    n, d = z.shape
    cols = [np.ones((n, 1)), z]
    if d <= _QUADRATIC_FEATURE_LIMIT:
        cols.append(z**2)
    if 2 <= d <= _INTERACTION_FEATURE_LIMIT:
        i, j = np.triu_indices(d, k=1)
        cols.append(z[:, i] * z[:, j])
    return np.concatenate(cols, axis=1)


def _median_pairwise(z: np.ndarray) -> float:
    """Median pairwise Euclidean distance, on a deterministic row subsample."""
    m = z.shape[0]
    if m < 2:
        return 1.0
    if m > _MEDIAN_SUBSAMPLE:
        z = z[np.linspace(0, m - 1, _MEDIAN_SUBSAMPLE).astype(int)]
    d = cdist(z, z)
    med = float(np.median(d[np.triu_indices(z.shape[0], k=1)]))
    return med if med > 0 else 1.0


def _standardize_columns(a: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    mean = a.mean(axis=0)
    std = a.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return (a - mean) / std, mean, std


def _weighted_quantile(values: np.ndarray, weights: np.ndarray, q: float) -> float:
    order = np.argsort(values, kind="stable")
    v, w = values[order], weights[order]
    cw = np.cumsum(w)
    return float(np.interp(q * cw[-1], cw, v))


def _silverman_bandwidth(residuals: np.ndarray, weights: np.ndarray) -> float:
    wsum = weights.sum()
    mean = np.dot(weights, residuals) / wsum
    var = np.dot(weights, (residuals - mean) ** 2) / wsum
    sigma = np.sqrt(max(var, 0.0))
    iqr = _weighted_quantile(residuals, weights, 0.75) - _weighted_quantile(
        residuals, weights, 0.25
    )
    spread = min(sigma, iqr / 1.34) if iqr > 0 else sigma
    if spread <= 0:
        # Degenerate (constant) targets: any positive width concentrates the
        # predictive at the constant; keep it small relative to the value.
        scale = max(1.0, float(np.max(np.abs(residuals))) if residuals.size else 1.0)
        return 1e-3 * scale
    n_eff = wsum**2 / np.dot(weights, weights)
    return 0.9 * spread * n_eff ** (-0.2)


class ReferenceBackend(InContextBackend):
    """Deterministic locally weighted backend satisfying the in-context contract.

    Parameters
    ----------
    regression_bandwidth_factor:
        Multiplier on the median-pairwise-distance feature bandwidth used for
        regression weights.
    classifier_bandwidth_factor:
        Multiplier on the classifier feature bandwidth, which additionally
        shrinks with context size as M**(-1/(d+4)) so label boundaries sharpen
        as evidence accumulates.
    """

    def __init__(
        self,
        regression_bandwidth_factor: float = 1.0,
        classifier_bandwidth_factor: float = 1.0,
        ridge: float = 1e-6,
        capabilities: BackendCapabilities = BackendCapabilities(),
    ):
        self._reg_factor = float(regression_bandwidth_factor)
        self._cls_factor = float(classifier_bandwidth_factor)
        self._ridge = float(ridge)
        self._capabilities = capabilities

    @property
    def capabilities(self) -> BackendCapabilities:
        return self._capabilities

    # -- regression ---------------------------------------------------------

    def regress_predict(
        self,
        context: ContextSet,
        queries: np.ndarray,
        seed: Optional[int] = None,
        grid_size: int = DEFAULT_GRID_SIZE,
    ) -> list[PredictiveDistribution1D]:
        queries = check_query_shape(context, queries)
        self._capabilities.check(context.size, context.n_features)
        targets = np.asarray(context.targets, dtype=float)
        z, mean, std = _standardize_columns(context.features)
        zq = (queries - mean) / std
        h = self._reg_factor * _median_pairwise(z)
        d2 = cdist(zq, z, metric="sqeuclidean")
        # Per-query rescaling (subtract the nearest distance) keeps weights in
        # (0, 1]; downstream estimates are invariant to the weight scale.
        weights = np.exp(-(d2 - d2.min(axis=1, keepdims=True)) / (2.0 * h * h))

        # The local fit carries polynomial terms scaled to the feature count:
        # a full quadratic (with interactions) in very low dimensions, squares
        # only in moderate ones, and a plain linear design in high dimensions
        # where quadratic terms would blow up the solve.
        design = _poly_design(z)
        design_q = _poly_design(zq)
        out = []
        for qi in range(zq.shape[0]):
            out.append(
                self._one_predictive(design, design_q[qi], targets, weights[qi], grid_size)
            )
        return out

    def _one_predictive(self, design, design_q, targets, w, grid_size):
        beta = self._wls(design, targets, w)
        fit_at_rows = design @ beta
        fit_at_query = design_q @ beta
        shifted = fit_at_query + (targets - fit_at_rows)
        bw = _silverman_bandwidth(targets - fit_at_rows, w)
        lo = float(shifted.min()) - 3.0 * bw
        hi = float(shifted.max()) + 3.0 * bw
        if hi <= lo:
            hi = lo + 1e-6
        grid = np.linspace(lo, hi, grid_size)
        density = _binned_kde(shifted, w, grid, bw)
        with np.errstate(divide="ignore"):
            log_density = np.log(density)
        return PredictiveDistribution1D(grid, log_density)

    def _wls(self, design: np.ndarray, targets: np.ndarray, w: np.ndarray) -> np.ndarray:
        wx = design * w[:, None]
        a = wx.T @ design
        b = wx.T @ targets
        lam = self._ridge * max(np.trace(a) / a.shape[0], 1e-30)
        a = a + lam * np.eye(a.shape[0])
        try:
            return np.linalg.solve(a, b)
        except np.linalg.LinAlgError:
            return np.linalg.lstsq(a, b, rcond=None)[0]

    # -- classification -----------------------------------------------------

    def classify_predict(
        self, context: ContextSet, queries: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        queries = check_query_shape(context, queries)
        self._capabilities.check(context.size, context.n_features)
        labels = class_labels(context.targets)
        # Canonical row order makes the output exactly invariant to context
        # row permutations (float reductions are order-sensitive).
        order = np.lexsort(
            np.vstack([np.asarray(context.targets, dtype=float)[None, :], context.features.T])
        )
        feats = context.features[order]
        targs = np.asarray(context.targets)[order]
        z, mean, std = _standardize_columns(feats)
        zq = (queries - mean) / std
        h = self._cls_factor * _median_pairwise(z)
        d2 = cdist(zq, z, metric="sqeuclidean")
        weights = np.exp(-(d2 - d2.min(axis=1, keepdims=True)) / (2.0 * h * h))
        raw = np.empty((zq.shape[0], labels.size))
        for ci, label in enumerate(labels):
            y = (targs == label).astype(float)
            raw[:, ci] = _local_logistic(z, y, zq, weights)
        if labels.size == 2:
            # Single binary fit; keep the two columns exactly complementary.
            raw[:, 0] = 1.0 - raw[:, 1]
        probs = raw / raw.sum(axis=1, keepdims=True)
        return labels, probs


_IRLS_ITERATIONS = 10
_IRLS_RIDGE = 1e-4
_IRLS_STEP_CLIP = 5.0
_ETA_CLIP = 25.0


def _local_logistic(
    z: np.ndarray, y: np.ndarray, zq: np.ndarray, weights: np.ndarray
) -> np.ndarray:
    """Kernel-weighted quadratic-logistic probability of ``y == 1`` at each query.

    Per query, fits logit P = b0 + b' (z - zq) + c * ||z - zq||^2 / d by
    weighted IRLS with a weak L2 penalty on the non-intercept terms, then
    shrinks sigma(b0) toward 1/2 by one pseudo-observation per class (so the
    output is strictly inside (0, 1) and degrades gracefully for isolated
    queries).

    The per-query design [1, z - zq, ||z - zq||^2/d] is a linear map of the
    query-independent basis phi(z) = [1, z, ||z||^2/d], so every IRLS update
    reduces to a few large matrix products over the whole query chunk.
    """
    n_q, (m, d) = zq.shape[0], z.shape
    phi = np.concatenate(
        [np.ones((m, 1)), z, np.sum(z**2, axis=1, keepdims=True) / d], axis=1
    )
    outer_flat = (phi[:, :, None] * phi[:, None, :]).reshape(m, -1)
    out = np.empty(n_q)
    chunk = max(1, int(4e6 / m))  # bounds the (chunk, M) working arrays
    for start in range(0, n_q, chunk):
        sl = slice(start, min(start + chunk, n_q))
        out[sl] = _local_logistic_chunk(phi, outer_flat, y, zq[sl], weights[sl], d)
    return out


def _query_basis_map(zq: np.ndarray, d: int) -> np.ndarray:
    """Per-query matrix T with [1, z - zq, ||z - zq||^2/d] = T @ phi(z)."""
    q = zq.shape[0]
    p = d + 2
    t = np.zeros((q, p, p))
    t[:, np.arange(p), np.arange(p)] = 1.0
    t[:, 1 : d + 1, 0] = -zq
    t[:, d + 1, 0] = np.sum(zq**2, axis=1) / d
    t[:, d + 1, 1 : d + 1] = -(2.0 / d) * zq
    return t


def _local_logistic_chunk(phi, outer_flat, y, zq, w, d) -> np.ndarray:
    q = zq.shape[0]
    p = d + 2
    t = _query_basis_map(zq, d)
    tt = t.transpose(0, 2, 1)
    penalty = np.eye(p)
    penalty[0, 0] = 0.0  # intercept unpenalized
    eye = np.eye(p)[None, :, :]
    wsum = np.maximum(w.sum(axis=1), 1e-30)
    lam = _IRLS_RIDGE * np.maximum(wsum, 1.0)
    beta = np.zeros((q, p))
    beta[:, 0] = _logit(np.clip((w * y).sum(axis=1) / wsum, 1e-6, 1 - 1e-6))
    # Per-query Newton iteration; each query's update depends only on its own
    # state, so converged queries can drop out without changing the rest.
    active = np.arange(q)
    for _ in range(_IRLS_ITERATIONS):
        ta, tta, wa = t[active], tt[active], w[active]
        gamma = np.matmul(tta, beta[active, :, None])[:, :, 0]
        eta = np.clip(gamma @ phi.T, -_ETA_CLIP, _ETA_CLIP)
        prob = 1.0 / (1.0 + np.exp(-eta))
        grad_phi = (wa * (y[None, :] - prob)) @ phi
        grad = np.matmul(ta, grad_phi[:, :, None])[:, :, 0] - lam[active, None] * (
            beta[active] @ penalty
        )
        curv = wa * prob * (1.0 - prob)
        inner = (curv @ outer_flat).reshape(active.size, p, p)
        hess = np.matmul(np.matmul(ta, inner), tta)
        hess += (lam[active, None, None] * penalty[None, :, :]) + 1e-10 * eye
        step = np.linalg.solve(hess, grad[:, :, None])[:, :, 0]
        beta[active] += np.clip(step, -_IRLS_STEP_CLIP, _IRLS_STEP_CLIP)
        moved = np.max(np.abs(step), axis=1) >= 1e-6
        active = active[moved]
        if active.size == 0:
            break
    p_query = 1.0 / (1.0 + np.exp(-np.clip(beta[:, 0], -_ETA_CLIP, _ETA_CLIP)))
    n_eff = wsum**2 / np.maximum((w**2).sum(axis=1), 1e-30)
    return (n_eff * p_query + 1.0) / (n_eff + 2.0)


def _logit(p: np.ndarray) -> np.ndarray:
    return np.log(p) - np.log1p(-p)


def _binned_kde(points: np.ndarray, weights: np.ndarray, grid: np.ndarray, bw: float) -> np.ndarray:
    """Weighted Gaussian KDE evaluated on a uniform grid via linear binning."""
    step = grid[1] - grid[0]
    pos = np.clip((points - grid[0]) / step, 0.0, grid.size - 1.0)
    idx = np.minimum(pos.astype(int), grid.size - 2)
    frac = pos - idx
    hist = np.zeros(grid.size)
    np.add.at(hist, idx, weights * (1.0 - frac))
    np.add.at(hist, idx + 1, weights * frac)
    smoothed = gaussian_filter1d(hist, sigma=max(bw / step, 1e-9), mode="constant", truncate=8.0)
    total = weights.sum() * step
    return np.maximum(smoothed / total, 0.0)
