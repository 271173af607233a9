"""Core numeric containers: simulation datasets, feature standardization, priors, CSV IO.

Conventions used throughout the package:

- all randomness flows from explicit 64-bit integer seeds (no ambient RNG),
- standardization uses the population standard deviation (divide by N),
- degenerate feature columns (std < 1e-12) keep std = 1 so constant features
  stay inert in Euclidean distances,
- rows with non-finite simulator output are kept with ``valid_mask = False``
  and excluded from standardization statistics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SimulationDataset",
    "StandardizationStats",
    "PriorSpec",
    "standardize",
    "save_dataset",
    "load_dataset",
    "derive_seed",
]

_DEGENERATE_STD = 1e-12
# 17 significant digits round-trip any IEEE-754 double exactly.
_FLOAT_FMT = "%.17g"


def derive_seed(seed: int, *path: int) -> int:
    """Derive a reproducible child seed from a root seed and an index path."""
    ss = np.random.SeedSequence(entropy=int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(int(p) for p in path))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class StandardizationStats:
    """Per-feature location/scale allowing an exact inverse transform."""

    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        std = np.asarray(self.std, dtype=float)
        if mean.shape != std.shape or mean.ndim != 1:
            raise ValueError("mean and std must be 1-D vectors of equal length")
        if np.any(std <= 0):
            raise ValueError("std entries must be positive")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def dim(self) -> int:
        return self.mean.shape[0]

    def transform(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=float)
        return (xs - self.mean) / self.std

    def inverse(self, zs: np.ndarray) -> np.ndarray:
        zs = np.asarray(zs, dtype=float)
        return zs * self.std + self.mean


def standardize(xs: np.ndarray) -> tuple[np.ndarray, StandardizationStats]:
    """Center and scale each column of ``xs`` to mean 0 and population std 1.

    Columns with population std below 1e-12 are treated as degenerate: they
    are centered but their std is recorded as 1.

    Returns the transformed matrix and the stats needed to invert it.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if xs.shape[0] == 0:
        raise ValueError("empty dataset")
    mean = xs.mean(axis=0)
    std = xs.std(axis=0)  # population convention (ddof=0)
    std = np.where(std < _DEGENERATE_STD, 1.0, std)
    stats = StandardizationStats(mean=mean, std=std)
    return stats.transform(xs), stats


@dataclass(frozen=True)
class SimulationDataset:
    """N rows of (parameter vector, observation vector) plus a validity flag.

    Immutable after construction; ``append`` returns a new dataset.
    """

    thetas: np.ndarray
    xs: np.ndarray
    valid_mask: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        thetas = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        xs = np.atleast_2d(np.asarray(self.xs, dtype=float))
        if self.valid_mask is None:
            if thetas.shape[0] == xs.shape[0]:
                valid = np.all(np.isfinite(xs), axis=1) & np.all(np.isfinite(thetas), axis=1)
            else:
                valid = np.empty(0, dtype=bool)
        else:
            valid = np.asarray(self.valid_mask, dtype=bool)
        if thetas.shape[0] != xs.shape[0] or thetas.shape[0] != valid.shape[0]:
            raise ValueError(
                f"row-count mismatch: thetas {thetas.shape[0]}, xs {xs.shape[0]}, "
                f"valid_mask {valid.shape[0]}"
            )
        thetas.setflags(write=False)
        xs.setflags(write=False)
        valid.setflags(write=False)
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "xs", xs)
        object.__setattr__(self, "valid_mask", valid)

    @classmethod
    def empty(cls, d_theta: int, d_x: int) -> "SimulationDataset":
        return cls(
            thetas=np.empty((0, d_theta)),
            xs=np.empty((0, d_x)),
            valid_mask=np.empty(0, dtype=bool),
        )

    def __len__(self) -> int:
        return self.thetas.shape[0]

    @property
    def d_theta(self) -> int:
        return self.thetas.shape[1]

    @property
    def d_x(self) -> int:
        return self.xs.shape[1]

    @property
    def n_valid(self) -> int:
        return int(self.valid_mask.sum())

    def valid_subset(self) -> "SimulationDataset":
        return self.subset(np.flatnonzero(self.valid_mask))

    def subset(self, indices) -> "SimulationDataset":
        indices = np.asarray(indices)
        return SimulationDataset(
            thetas=self.thetas[indices],
            xs=self.xs[indices],
            valid_mask=self.valid_mask[indices],
        )

    def append(self, other: "SimulationDataset") -> "SimulationDataset":
        if len(self) == 0:
            return other
        if other.d_theta != self.d_theta or other.d_x != self.d_x:
            raise ValueError("appended dataset has incompatible widths")
        return SimulationDataset(
            thetas=np.vstack([self.thetas, other.thetas]),
            xs=np.vstack([self.xs, other.xs]),
            valid_mask=np.concatenate([self.valid_mask, other.valid_mask]),
        )

    def x_standardization(self) -> StandardizationStats:
        """Standardization stats of the observation columns over valid rows only."""
        xs = self.xs[self.valid_mask]
        if xs.shape[0] == 0:
            raise ValueError("empty dataset")
        _, stats = standardize(xs)
        return stats


def save_dataset(dataset: SimulationDataset, path) -> None:
    """Write a dataset as CSV: ``theta_0..theta_{dt-1}, x_0..x_{dx-1}, valid``."""
    header = (
        [f"theta_{j}" for j in range(dataset.d_theta)]
        + [f"x_{j}" for j in range(dataset.d_x)]
        + ["valid"]
    )
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(len(dataset)):
            cells = [_FLOAT_FMT % v for v in dataset.thetas[i]]
            cells += [_FLOAT_FMT % v for v in dataset.xs[i]]
            cells.append("1" if dataset.valid_mask[i] else "0")
            fh.write(",".join(cells) + "\n")


def load_dataset(path) -> SimulationDataset:
    """Read a dataset written by :func:`save_dataset`.

    Raises ``ValueError`` naming the offending line for malformed rows or
    inconsistent widths.
    """
    with open(path) as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty file, expected a header")
    header = lines[0].split(",")
    d_theta = sum(1 for h in header if h.startswith("theta_"))
    d_x = sum(1 for h in header if h.startswith("x_"))
    if header != [f"theta_{j}" for j in range(d_theta)] + [f"x_{j}" for j in range(d_x)] + ["valid"]:
        raise ValueError(f"{path}: line 1: unrecognized header {header!r}")
    width = d_theta + d_x + 1
    thetas, xs, valid = [], [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != width:
            raise ValueError(f"{path}: line {lineno}: expected {width} columns, found {len(cells)}")
        try:
            row = [float(c) for c in cells[:-1]]
            flag = int(cells[-1])
        except ValueError as exc:
            raise ValueError(f"{path}: line {lineno}: {exc}") from None
        if flag not in (0, 1):
            raise ValueError(f"{path}: line {lineno}: valid flag must be 0 or 1")
        thetas.append(row[:d_theta])
        xs.append(row[d_theta:])
        valid.append(bool(flag))
    if not thetas:
        return SimulationDataset.empty(d_theta, d_x)
    return SimulationDataset(
        thetas=np.asarray(thetas), xs=np.asarray(xs), valid_mask=np.asarray(valid, dtype=bool)
    )


@dataclass(frozen=True)
class PriorSpec:
    """Prior over parameters: a box-uniform or diagonal Gaussian.

    ``theta_min``/``theta_max`` bound the support used for uniform contrast
    sampling; for box-uniform priors they default to the box itself, for
    Gaussians to mean +/- 4 std.
    """

    kind: str  # "box-uniform" | "diagonal-gaussian"
    low: np.ndarray = None  # type: ignore[assignment]
    high: np.ndarray = None  # type: ignore[assignment]
    mean: np.ndarray = None  # type: ignore[assignment]
    std: np.ndarray = None  # type: ignore[assignment]
    theta_min: np.ndarray = None  # type: ignore[assignment]
    theta_max: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        def _vec(v):
            return None if v is None else np.asarray(v, dtype=float)

        low, high = _vec(self.low), _vec(self.high)
        mean, std = _vec(self.mean), _vec(self.std)
        tmin, tmax = _vec(self.theta_min), _vec(self.theta_max)
        if self.kind == "box-uniform":
            if low is None or high is None:
                raise ValueError("box-uniform prior needs low and high")
            if not np.all(low < high):
                raise ValueError("prior bounds must satisfy low < high elementwise")
            tmin = low if tmin is None else tmin
            tmax = high if tmax is None else tmax
        elif self.kind == "diagonal-gaussian":
            if mean is None or std is None:
                raise ValueError("diagonal-gaussian prior needs mean and std")
            if not np.all(std > 0):
                raise ValueError("prior std must be positive elementwise")
            tmin = mean - 4.0 * std if tmin is None else tmin
            tmax = mean + 4.0 * std if tmax is None else tmax
        else:
            raise ValueError(f"unknown prior kind {self.kind!r}")
        if not np.all(tmin < tmax):
            raise ValueError("contrast bounds must satisfy theta_min < theta_max")
        for name, value in [
            ("low", low), ("high", high), ("mean", mean), ("std", std),
            ("theta_min", tmin), ("theta_max", tmax),
        ]:
            if value is not None:
                value.setflags(write=False)
            object.__setattr__(self, name, value)

    @classmethod
    def box_uniform(cls, low, high) -> "PriorSpec":
        low = np.atleast_1d(np.asarray(low, dtype=float))
        high = np.atleast_1d(np.asarray(high, dtype=float))
        return cls(kind="box-uniform", low=low, high=high)

    @classmethod
    def diagonal_gaussian(cls, mean, std) -> "PriorSpec":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        std = np.atleast_1d(np.asarray(std, dtype=float)) * np.ones_like(mean)
        return cls(kind="diagonal-gaussian", mean=mean, std=std)

    @property
    def dim(self) -> int:
        return self.theta_min.shape[0]

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "box-uniform":
            return rng.uniform(self.low, self.high, size=(n, self.dim))
        return rng.normal(self.mean, self.std, size=(n, self.dim))

    def log_prob(self, thetas: np.ndarray) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        if self.kind == "box-uniform":
            inside = np.all((thetas >= self.low) & (thetas <= self.high), axis=1)
            const = -np.sum(np.log(self.high - self.low))
            return np.where(inside, const, -np.inf)
        z = (thetas - self.mean) / self.std
        return -0.5 * np.sum(z**2, axis=1) - np.sum(np.log(self.std)) - 0.5 * self.dim * np.log(2 * np.pi)
