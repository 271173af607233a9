"""Fast approximate posterior-density evaluation via the density-ratio trick.

Posterior samples (class 1) are contrasted against uniform draws over a box
(class 0); the Bayes-optimal classifier probability then recovers the
posterior density up to the uniform constant:

    density(theta) = P(y=1 | theta) / (1 - P(y=1 | theta)) * u,

where u is the uniform density on the box. The constant is dropped: every
consumer (HDR thresholds, rejection against a quantile) is invariant to it.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .backends.base import ContextSet, InContextBackend
from .data import derive_seed

__all__ = ["RatioEstimator", "build_ratio_estimator", "ratio_log_density", "log_ratio_from_prob"]

DEFAULT_RATIO_SIZE = 5_000
_PROB_CLAMP = 1e-6


@dataclass(frozen=True)
class RatioEstimator:
    """Classifier context contrasting posterior draws with uniform draws."""

    context: ContextSet
    theta_min: np.ndarray
    theta_max: np.ndarray
    backend: InContextBackend
    n_clipped: int = 0

    @property
    def log_uniform_density(self) -> float:
        """Log-density of the uniform contrast (the omitted additive constant)."""
        return float(-np.sum(np.log(self.theta_max - self.theta_min)))


def build_ratio_estimator(
    posterior_samples: np.ndarray,
    bounds: tuple[np.ndarray, np.ndarray],
    backend: InContextBackend,
    m_per_class: int = DEFAULT_RATIO_SIZE,
    seed: int = 0,
) -> RatioEstimator:
    """Assemble the two-class context: m posterior rows (1) vs m uniform rows (0).

    Posterior samples falling outside the uniform bounds are excluded (the
    Bayes relation only holds on the contrast support); the clipped count is
    reported on the estimator and both classes are kept at equal size.
    """
    samples = np.atleast_2d(np.asarray(posterior_samples, dtype=float))
    theta_min = np.asarray(bounds[0], dtype=float)
    theta_max = np.asarray(bounds[1], dtype=float)
    if not (np.all(np.isfinite(theta_min)) and np.all(np.isfinite(theta_max))):
        raise ValueError("bounds must be finite")
    if samples.shape[0] < m_per_class:
        raise ValueError(
            f"need at least {m_per_class} posterior samples, got {samples.shape[0]}"
        )
    samples = samples[:m_per_class]
    inside = np.all((samples >= theta_min) & (samples <= theta_max), axis=1)
    n_clipped = int(np.sum(~inside))
    if n_clipped:
        warnings.warn(
            f"{n_clipped} posterior sample(s) outside the uniform bounds were excluded"
        )
        samples = samples[inside]
    if samples.shape[0] == 0:
        raise ValueError("no posterior samples inside the uniform bounds")
    rng = np.random.default_rng(derive_seed(seed, 4))
    uniform = rng.uniform(theta_min, theta_max, size=samples.shape)
    features = np.vstack([samples, uniform])
    labels = np.concatenate([np.ones(samples.shape[0]), np.zeros(samples.shape[0])])
    context = ContextSet(features=features, targets=labels)
    return RatioEstimator(
        context=context,
        theta_min=theta_min,
        theta_max=theta_max,
        backend=backend,
        n_clipped=n_clipped,
    )


def log_ratio_from_prob(probs: np.ndarray) -> np.ndarray:
    """log P - log(1 - P), with P clamped away from {0, 1}."""
    probs = np.asarray(probs, dtype=float)
    if np.any((probs <= _PROB_CLAMP) | (probs >= 1.0 - _PROB_CLAMP)):
        warnings.warn("classifier probabilities clamped to [1e-6, 1 - 1e-6]")
    probs = np.clip(probs, _PROB_CLAMP, 1.0 - _PROB_CLAMP)
    return np.log(probs) - np.log1p(-probs)


def ratio_log_density(estimator: RatioEstimator, thetas: np.ndarray) -> np.ndarray:
    """Relative posterior log-density at each point (additive constant dropped).

    Points outside the contrast bounds get ``-inf``: the classifier identity
    is undefined there and truncation-style consumers must reject them.
    """
    thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
    inside = np.all(
        (thetas >= estimator.theta_min) & (thetas <= estimator.theta_max), axis=1
    )
    out = np.full(thetas.shape[0], -np.inf)
    if np.any(inside):
        labels, probs = estimator.backend.classify_predict(
            estimator.context, thetas[inside]
        )
        col = int(np.argmax(labels == 1.0))
        out[inside] = log_ratio_from_prob(probs[:, col])
    return out
