"""Truncated sequential acquisition: multi-round inference where new
simulations are drawn only from the prior restricted to the current
posterior's highest-density region (HDR).

Each round after the first: draw posterior samples with the amortized
engine, build a ratio estimator from them, take the empirical alpha-quantile
of their own relative log-densities as the HDR threshold, then acquire the
round's simulation budget from the truncated prior by rejection sampling (or
sampling-importance resampling for high-dimensional problems). Truncation
happens in parameter space before simulating, so rejected proposals cost no
simulator calls.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np

from .backends.base import ContextSet, InContextBackend
from .data import PriorSpec, SimulationDataset, derive_seed
from .engine import FilterConfig, PosteriorSampleSet, npe_sample
from .metrics import energy_score
from .ratio import build_ratio_estimator, ratio_log_density
from .tasks import TaskSpec, sample_joint

__all__ = [
    "TsnpeConfig",
    "TsnpeResult",
    "TsnpeRoundError",
    "RestrictedPrior",
    "estimate_hdr_threshold",
    "truncated_prior_rejection_sample",
    "sir_resample",
    "restricted_prior",
    "run_tsnpe",
]

RESTRICTED_CONTEXT_CAP = 5_000


@dataclass(frozen=True)
class TsnpeConfig:
    """Round schedule and truncation settings for sequential acquisition."""

    rounds: int = 10
    sims_per_round: int = 100
    alpha: float = 1e-3
    ratio_size: int = 5_000
    proposal_mode: str = "rejection"  # "rejection" | "sir"
    sir_oversample: int = 10
    validity_threshold: Optional[float] = None
    first_round_sims: Optional[int] = None
    n_filter: int = 10_000

    def __post_init__(self):
        if self.rounds < 1 or self.sims_per_round < 1 or self.ratio_size < 1:
            raise ValueError("rounds, sims_per_round and ratio_size must be >= 1")
        if not 0.0 < self.alpha < 1.0:
            raise ValueError("alpha must lie in (0, 1)")
        if self.proposal_mode not in ("rejection", "sir"):
            raise ValueError("proposal_mode must be 'rejection' or 'sir'")
        if self.sir_oversample < 1:
            raise ValueError("sir_oversample must be >= 1")
        if self.validity_threshold is not None and not 0.0 < self.validity_threshold < 1.0:
            raise ValueError("validity_threshold must lie in (0, 1)")


def estimate_hdr_threshold(log_densities: np.ndarray, alpha: float) -> float:
    """Empirical alpha-quantile (lower interpolation) of the samples' densities.

    Lower interpolation is conservative: the retained HDR is never smaller
    than requested. The alpha -> 0 limit returns the minimum value.
    """
    vals = np.asarray(log_densities, dtype=float)
    if vals.size == 0 or not np.any(np.isfinite(vals)):
        raise ValueError("need at least one finite log-density")
    return float(np.quantile(vals, alpha, method="lower"))


def truncated_prior_rejection_sample(
    prior,
    log_density_fn: Callable[[np.ndarray], np.ndarray],
    k_alpha: float,
    n: int,
    seed: int = 0,
    batch_size: int = 4_096,
) -> tuple[np.ndarray, dict]:
    """Draw n prior samples satisfying ``log_density_fn(theta) >= k_alpha``.

    Returns the samples and acceptance diagnostics. Aborts once at least 1e6
    proposals have been scored with an acceptance rate below 1e-6.
    """
    rng = np.random.default_rng(derive_seed(seed, 20))
    accepted: list[np.ndarray] = []
    n_total = 0
    n_kept = 0
    while n_kept < n:
        draws = prior.sample(batch_size, rng)
        if k_alpha == -np.inf:
            keep = draws
        else:
            keep = draws[np.asarray(log_density_fn(draws)) >= k_alpha]
        n_total += batch_size
        n_kept += keep.shape[0]
        accepted.append(keep)
        if n_total >= 1_000_000 and n_kept / n_total < 1e-6:
            raise RuntimeError(
                f"truncated-prior acceptance rate {n_kept / n_total:.2e} below 1e-6 "
                f"after {n_total} proposals; threshold k_alpha={k_alpha:.4g} is too tight"
            )
    samples = np.vstack(accepted)[:n]
    return samples, {
        "n_proposed": n_total,
        "n_accepted": n_kept,
        "acceptance_rate": n_kept / n_total,
    }


def sir_resample(
    prior,
    proposal_sampler: Callable[[int, np.random.Generator], np.ndarray],
    proposal_log_density: Callable[[np.ndarray], np.ndarray],
    n: int,
    oversample: int = 10,
    seed: int = 0,
) -> tuple[np.ndarray, dict]:
    """Sampling-importance resampling toward an unnormalized target.

    Draws ``oversample * n`` proposals, weights them by
    ``target(theta) / proposal(theta)`` (both up to constants), and resamples
    n with replacement. ``prior`` supplies the target numerator: either an
    object with ``log_prob`` (optionally restricted) or a plain callable.
    """
    rng = np.random.default_rng(derive_seed(seed, 21))
    draws = np.atleast_2d(proposal_sampler(oversample * n, rng))
    target_fn = prior.log_prob if hasattr(prior, "log_prob") else prior
    log_w = np.asarray(target_fn(draws), dtype=float) - np.asarray(
        proposal_log_density(draws), dtype=float
    )
    finite = np.isfinite(log_w)
    if not np.any(finite):
        raise ValueError("all-zero importance weights: target and proposal do not overlap")
    w = np.zeros(log_w.shape[0])
    w[finite] = np.exp(log_w[finite] - np.max(log_w[finite]))
    probs = w / w.sum()
    idx = rng.choice(draws.shape[0], size=n, replace=True, p=probs)
    ess = float(1.0 / np.sum(probs**2))
    return draws[idx], {"n_proposed": draws.shape[0], "ess": ess}


class RestrictedPrior:
    """Prior truncated to parameters a validity classifier accepts.

    Sampling rejects draws with predicted validity probability <= c; the
    log-density adds ``-inf`` outside the accepted region (normalization
    constant dropped, as everywhere else in the truncation machinery).
    """

    def __init__(self, base: PriorSpec, context: ContextSet, threshold: float, backend):
        self.base = base
        self.context = context
        self.threshold = float(threshold)
        self.backend = backend

    @property
    def theta_min(self):
        return self.base.theta_min

    @property
    def theta_max(self):
        return self.base.theta_max

    def predict_valid(self, thetas: np.ndarray) -> np.ndarray:
        labels, probs = self.backend.classify_predict(self.context, thetas)
        return probs[:, int(np.argmax(labels == 1.0))]

    def accepts(self, thetas: np.ndarray) -> np.ndarray:
        return self.predict_valid(thetas) > self.threshold

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        out: list[np.ndarray] = []
        kept = 0
        n_total = 0
        batch = max(n, 1024)
        while kept < n:
            draws = self.base.sample(batch, rng)
            keep = draws[self.accepts(draws)]
            out.append(keep)
            kept += keep.shape[0]
            n_total += batch
            if n_total >= 1_000_000 and kept / n_total < 1e-6:
                raise RuntimeError("restricted prior accepts almost nothing")
        return np.vstack(out)[:n]

    def log_prob(self, thetas: np.ndarray) -> np.ndarray:
        lp = self.base.log_prob(thetas)
        return np.where(self.accepts(np.atleast_2d(thetas)), lp, -np.inf)


def restricted_prior(
    validity_dataset: SimulationDataset,
    prior: PriorSpec,
    threshold: float,
    backend: InContextBackend,
    seed: int = 0,
    max_context: int = RESTRICTED_CONTEXT_CAP,
) -> Union[RestrictedPrior, PriorSpec]:
    """Build a validity-restricted prior from labeled simulations.

    The classifier context holds up to ``max_context`` rows sampled from the
    dataset. If only one validity class is present the unrestricted prior is
    returned with a warning.
    """
    labels = validity_dataset.valid_mask.astype(float)
    if np.unique(labels).size < 2:
        warnings.warn("validity data has a single class; prior left unrestricted")
        return prior
    thetas = validity_dataset.thetas
    if len(validity_dataset) > max_context:
        rng = np.random.default_rng(derive_seed(seed, 22))
        idx = rng.choice(len(validity_dataset), size=max_context, replace=False)
        thetas, labels = thetas[idx], labels[idx]
        if np.unique(labels).size < 2:
            warnings.warn("validity subsample has a single class; prior left unrestricted")
            return prior
    context = ContextSet(features=thetas, targets=labels)
    return RestrictedPrior(base=prior, context=context, threshold=threshold, backend=backend)


@dataclass(frozen=True)
class TsnpeResult:
    dataset: SimulationDataset
    posterior: PosteriorSampleSet
    rounds: list[dict]

    @property
    def n_simulator_calls(self) -> int:
        return int(sum(r["n_simulator_calls"] for r in self.rounds))


class TsnpeRoundError(RuntimeError):
    """A round failed; ``completed`` carries the artifacts of finished rounds."""

    def __init__(self, message: str, completed_rounds: list[dict], dataset: SimulationDataset):
        super().__init__(message)
        self.completed_rounds = completed_rounds
        self.dataset = dataset


def run_tsnpe(
    task: TaskSpec,
    config: TsnpeConfig,
    x_o: np.ndarray,
    backend: InContextBackend,
    seed: int = 0,
    n_posterior_samples: int = 1_000,
    order=None,
) -> TsnpeResult:
    """Multi-round truncated sequential inference for one observation.

    Round 1 simulates from the (optionally validity-restricted) prior; each
    later round truncates the prior to the HDR of the current posterior
    approximation, scored by the round's ratio estimator, before spending its
    simulation budget. With ``rounds=1`` this reduces to the plain amortized
    pipeline on prior simulations.
    """
    x_o = np.asarray(x_o, dtype=float).reshape(-1)
    filter_config = FilterConfig(n_filter=config.n_filter)
    rounds: list[dict] = []
    dataset = SimulationDataset.empty(task.d_theta, task.d_x)
    try:
        for r in range(1, config.rounds + 1):
            n_round = (
                config.first_round_sims
                if (r == 1 and config.first_round_sims is not None)
                else config.sims_per_round
            )
            record: dict = {"round": r, "n_new": int(n_round)}
            if r == 1:
                new_data = sample_joint(task, n_round, derive_seed(seed, 10, 1))
                record["n_simulator_calls"] = int(n_round)
            else:
                new_data, info = _acquire_round(
                    task, config, x_o, backend, dataset, filter_config, order, seed, r
                )
                record.update(info)
            dataset = dataset.append(new_data)
            record["valid_fraction"] = (
                float(new_data.valid_mask.mean()) if len(new_data) else 0.0
            )
            record["energy_score"] = _round_energy(dataset, new_data, x_o)
            rounds.append(record)
    except Exception as exc:
        raise TsnpeRoundError(
            f"round {len(rounds) + 1} failed: {exc}", completed_rounds=rounds, dataset=dataset
        ) from exc
    posterior = npe_sample(
        dataset,
        x_o,
        n_posterior_samples,
        backend,
        filter_config=filter_config,
        order=order,
        seed=derive_seed(seed, 16),
        provenance={"task": task.name, "rounds": config.rounds},
    )
    return TsnpeResult(dataset=dataset, posterior=posterior, rounds=rounds)


def _acquire_round(task, config, x_o, backend, dataset, filter_config, order, seed, r):
    """One truncated acquisition: posterior -> ratio -> HDR -> proposals -> sims."""
    proposal_prior = task.prior
    if config.validity_threshold is not None:
        proposal_prior = restricted_prior(
            dataset,
            task.prior,
            config.validity_threshold,
            backend,
            seed=derive_seed(seed, 15, r),
        )
    posterior = npe_sample(
        dataset,
        x_o,
        config.ratio_size,
        backend,
        filter_config=filter_config,
        order=order,
        seed=derive_seed(seed, 11, r),
    )
    estimator = build_ratio_estimator(
        posterior.samples,
        (task.prior.theta_min, task.prior.theta_max),
        backend,
        m_per_class=config.ratio_size,
        seed=derive_seed(seed, 12, r),
    )
    # Threshold over the samples retained in the ratio context (out-of-bounds
    # draws carry no density information and would pin the quantile at -inf).
    kept = estimator.context.features[np.asarray(estimator.context.targets) == 1.0]
    own_density = ratio_log_density(estimator, kept)
    k_alpha = estimate_hdr_threshold(own_density, config.alpha)
    info = {
        "k_alpha": float(k_alpha),
        "posterior_mean": posterior.mean().tolist(),
    }
    if config.proposal_mode == "rejection":
        thetas, diag = truncated_prior_rejection_sample(
            proposal_prior,
            lambda t: ratio_log_density(estimator, t),
            k_alpha,
            config.sims_per_round,
            seed=derive_seed(seed, 13, r),
        )
        info.update(diag)
    else:
        def target_log_prob(t):
            lp = (
                proposal_prior.log_prob(t)
                if hasattr(proposal_prior, "log_prob")
                else proposal_prior(t)
            )
            return np.where(ratio_log_density(estimator, t) >= k_alpha, lp, -np.inf)

        def proposal_sampler(n, rng):
            return npe_sample(
                dataset,
                x_o,
                n,
                backend,
                filter_config=filter_config,
                order=order,
                seed=derive_seed(seed, 17, r),
            ).samples

        thetas, diag = sir_resample(
            target_log_prob,
            proposal_sampler,
            lambda t: ratio_log_density(estimator, t),
            config.sims_per_round,
            oversample=config.sir_oversample,
            seed=derive_seed(seed, 13, r),
        )
        info.update(diag)
    info["hdr_log_densities"] = ratio_log_density(estimator, thetas).tolist()
    rng_sim = np.random.default_rng(derive_seed(seed, 14, r))
    xs = task.simulate_batch(thetas, rng_sim)
    info["n_simulator_calls"] = int(thetas.shape[0])
    return SimulationDataset(thetas=thetas, xs=xs), info


def _round_energy(dataset: SimulationDataset, new_data: SimulationDataset, x_o) -> Optional[float]:
    """Energy score of the round's valid acquisitions in standardized space."""
    new_valid = new_data.valid_subset()
    if len(new_valid) < 2:
        return None
    stats = dataset.x_standardization()
    return energy_score(stats.transform(new_valid.xs), stats.transform(np.asarray(x_o)))
