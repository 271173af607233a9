"""Abstract in-context backend: a regressor/classifier conditioned per call.

A backend receives a context set with every request and returns, for each
query row, either a full 1-D predictive density on a grid (regression) or a
class-probability vector (classification). Implementations must be stateless
across calls.
"""

from __future__ import annotations

import abc
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

__all__ = [
    "ContextSet",
    "PredictiveDistribution1D",
    "BackendCapabilities",
    "InContextBackend",
    "BackendError",
]

DEFAULT_GRID_SIZE = 512


class BackendError(RuntimeError):
    """Raised when a backend cannot satisfy a request."""


@dataclass(frozen=True)
class BackendCapabilities:
    """Soft limits; exceeding them warns but does not fail."""

    max_context: int = 10_000
    max_features: int = 500

    def __post_init__(self):
        if self.max_context < 1 or self.max_features < 1:
            raise ValueError("capabilities must be positive")

    def check(self, n_context: int, n_features: int) -> None:
        if n_context > self.max_context:
            warnings.warn(
                f"context size {n_context} exceeds soft limit {self.max_context}",
                stacklevel=3,
            )
        if n_features > self.max_features:
            warnings.warn(
                f"feature count {n_features} exceeds soft limit {self.max_features}",
                stacklevel=3,
            )


@dataclass(frozen=True)
class ContextSet:
    """In-context training set: features (M, d) and scalar targets (M,)."""

    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        features = np.atleast_2d(np.asarray(self.features, dtype=float))
        targets = np.asarray(self.targets)
        if features.shape[0] == 0:
            raise ValueError("empty context")
        if targets.shape != (features.shape[0],):
            raise ValueError(
                f"targets shape {targets.shape} does not match {features.shape[0]} context rows"
            )
        if not np.all(np.isfinite(features)):
            raise ValueError("non-finite context features")
        if not np.all(np.isfinite(np.asarray(targets, dtype=float))):
            raise ValueError("non-finite context targets")
        features.setflags(write=False)
        targets.setflags(write=False)
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "targets", targets)

    @property
    def size(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]


class PredictiveDistribution1D:
    """1-D predictive density on a strictly increasing grid.

    The stored log-density is normalized so the trapezoid integral over the
    grid is 1. Sampling and quantiles use the piecewise-linear CDF built from
    the same trapezoid rule, so ``quantile(cdf(y)) == y`` up to one grid cell.
    """

    def __init__(self, grid: np.ndarray, log_density: np.ndarray):
        grid = np.asarray(grid, dtype=float)
        log_density = np.asarray(log_density, dtype=float)
        if grid.ndim != 1 or grid.shape != log_density.shape or grid.size < 2:
            raise ValueError("grid and log_density must be matching 1-D arrays (size >= 2)")
        if not np.all(np.isfinite(grid)) or not np.all(np.diff(grid) > 0):
            raise ValueError("grid must be finite and strictly increasing")
        if np.any(np.isnan(log_density)) or np.any(log_density == np.inf):
            raise ValueError("log_density must be < inf and not NaN")
        # Floor -inf / extreme values so interpolation stays finite.
        peak = np.max(log_density)
        if not np.isfinite(peak):
            raise ValueError("log_density has no finite entries")
        log_density = np.maximum(log_density, peak - 700.0)
        density = np.exp(log_density)
        total = np.trapezoid(density, grid)
        if total <= 0 or not np.isfinite(total):
            raise ValueError("density does not integrate to a positive finite value")
        self.grid = grid
        # Already-normalized input passes through unchanged, so a distribution
        # round-tripped through the wire protocol stays bitwise identical;
        # density and CDF always derive from the stored log-density.
        if abs(np.log(total)) > 1e-12:
            self.log_density = log_density - np.log(total)
        else:
            self.log_density = log_density
        self._density = np.exp(self.log_density)
        cdf = np.concatenate(
            [[0.0], np.cumsum(0.5 * (self._density[1:] + self._density[:-1]) * np.diff(grid))]
        )
        self._cdf = cdf / cdf[-1]

    def pdf(self, ys) -> np.ndarray:
        return np.exp(self.log_prob(ys))

    def log_prob(self, ys) -> np.ndarray:
        """Log-density, linearly interpolated in log space; -inf outside the grid."""
        ys = np.asarray(ys, dtype=float)
        out = np.interp(ys, self.grid, self.log_density)
        return np.where((ys < self.grid[0]) | (ys > self.grid[-1]), -np.inf, out)

    def cdf(self, ys) -> np.ndarray:
        ys = np.asarray(ys, dtype=float)
        return np.interp(ys, self.grid, self._cdf)

    def quantile(self, us) -> np.ndarray:
        us = np.asarray(us, dtype=float)
        return np.interp(us, self._cdf, self.grid)

    def mean(self) -> float:
        return float(np.trapezoid(self.grid * self._density, self.grid))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.quantile(rng.random(n))


class InContextBackend(abc.ABC):
    """Interface shared by the reference backend and wire-protocol bridges."""

    @property
    @abc.abstractmethod
    def capabilities(self) -> BackendCapabilities:
        ...

    @abc.abstractmethod
    def regress_predict(
        self,
        context: ContextSet,
        queries: np.ndarray,
        seed: Optional[int] = None,
        grid_size: int = DEFAULT_GRID_SIZE,
    ) -> list[PredictiveDistribution1D]:
        """One predictive density per query row.

        Raises ``BackendError`` for width mismatches or empty contexts.
        """

    @abc.abstractmethod
    def classify_predict(
        self, context: ContextSet, queries: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Class labels (sorted) and per-query probability vectors summing to 1."""


def check_query_shape(context: ContextSet, queries: np.ndarray) -> np.ndarray:
    queries = np.atleast_2d(np.asarray(queries, dtype=float))
    if queries.shape[1] != context.n_features:
        raise BackendError(
            f"query width {queries.shape[1]} does not match context width {context.n_features}"
        )
    if not np.all(np.isfinite(queries)):
        raise BackendError("non-finite query features")
    return queries


def class_labels(targets: np.ndarray) -> np.ndarray:
    labels = np.unique(np.asarray(targets))
    if labels.size < 2:
        raise BackendError("classification context must contain at least two classes")
    return labels
