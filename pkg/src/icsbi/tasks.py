"""Built-in inference tasks: priors, stochastic simulators, and analytic oracles.

Each task is a :class:`TaskSpec` bundling a prior, a seeded simulator
``theta -> x``, and, where tractable, an analytic posterior. ODE-based tasks
(epidemic and predator-prey) integrate with fixed-step RK4; their noise model
and observation grid are configuration, not ground truth.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy import stats as sp_stats

from .data import PriorSpec, SimulationDataset, derive_seed

__all__ = [
    "TaskSpec",
    "MisspecConfig",
    "gaussian_linear_task",
    "gaussian_mixture_task",
    "two_moons_task",
    "sir_task",
    "lotka_volterra_task",
    "misspecified_gaussian_task",
    "sample_misspecified",
    "misspec_reference_posterior",
    "nonlinear_chain_task",
    "mixed_chain_task",
    "sample_joint",
    "get_task",
    "task_names",
]


@dataclass(frozen=True)
class GaussianPosterior:
    """Conjugate Gaussian posterior oracle: exact mean/covariance given x_o."""

    prior_mean: np.ndarray
    prior_var: float
    lik_var: float

    def mean(self, x_o: np.ndarray) -> np.ndarray:
        x_o = np.asarray(x_o, dtype=float)
        prec = 1.0 / self.prior_var + 1.0 / self.lik_var
        return (self.prior_mean / self.prior_var + x_o / self.lik_var) / prec

    def cov(self, x_o: np.ndarray) -> np.ndarray:
        prec = 1.0 / self.prior_var + 1.0 / self.lik_var
        return np.eye(len(self.prior_mean)) / prec

    def sample(self, x_o: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
        std = math.sqrt(1.0 / (1.0 / self.prior_var + 1.0 / self.lik_var))
        return rng.normal(self.mean(x_o), std, size=(n, len(self.prior_mean)))

    def log_prob(self, thetas: np.ndarray, x_o: np.ndarray) -> np.ndarray:
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        var = 1.0 / (1.0 / self.prior_var + 1.0 / self.lik_var)
        diff = thetas - self.mean(x_o)
        d = thetas.shape[1]
        return -0.5 * np.sum(diff**2, axis=1) / var - 0.5 * d * np.log(2 * np.pi * var)


@dataclass(frozen=True)
class TaskSpec:
    """A named simulator with its prior and optional analytic posterior."""

    name: str
    d_theta: int
    d_x: int
    prior: PriorSpec
    simulate: Optional[Callable[[np.ndarray, np.random.Generator], np.ndarray]]
    analytic_posterior: Optional[object] = None
    # Tasks defined by a joint generative chain (observation drawn first)
    # provide this instead of ``simulate``.
    joint_sampler: Optional[Callable[[int, np.random.Generator], tuple]] = None

    def simulate_batch(self, thetas: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        if self.simulate is None:
            raise ValueError(f"task {self.name!r} has no forward simulator")
        thetas = np.atleast_2d(thetas)
        return np.stack([self.simulate(t, rng) for t in thetas])


def sample_joint(task: TaskSpec, n: int, seed: int) -> SimulationDataset:
    """Draw n i.i.d. (theta, x) pairs from prior and simulator, reproducibly."""
    rng = np.random.default_rng(derive_seed(seed, 0))
    if n == 0:
        return SimulationDataset.empty(task.d_theta, task.d_x)
    if task.joint_sampler is not None:
        thetas, xs = task.joint_sampler(n, rng)
        return SimulationDataset(thetas=thetas, xs=xs)
    thetas = task.prior.sample(n, rng)
    xs = task.simulate_batch(thetas, rng)
    return SimulationDataset(thetas=thetas, xs=xs)


# ---------------------------------------------------------------------------
# Gaussian linear: mean inference in a 10-D Gaussian with fixed covariance.
# ---------------------------------------------------------------------------

def gaussian_linear_task(dim: int = 10, prior_var: float = 0.1, lik_var: float = 0.1) -> TaskSpec:
    prior = PriorSpec.diagonal_gaussian(np.zeros(dim), math.sqrt(prior_var))

    def simulate(theta, rng):
        return theta + math.sqrt(lik_var) * rng.standard_normal(dim)

    return TaskSpec(
        name="gaussian_linear",
        d_theta=dim,
        d_x=dim,
        prior=prior,
        simulate=simulate,
        analytic_posterior=GaussianPosterior(
            prior_mean=np.zeros(dim), prior_var=prior_var, lik_var=lik_var
        ),
    )


# ---------------------------------------------------------------------------
# Gaussian mixture: common mean of two 2-D Gaussians with different scales.
# ---------------------------------------------------------------------------

def gaussian_mixture_task(scale_wide: float = 1.0, scale_narrow: float = 0.1) -> TaskSpec:
    prior = PriorSpec.box_uniform([-10.0, -10.0], [10.0, 10.0])

    def simulate(theta, rng):
        scale = scale_wide if rng.random() < 0.5 else scale_narrow
        return theta + scale * rng.standard_normal(2)

    return TaskSpec(name="gaussian_mixture", d_theta=2, d_x=2, prior=prior, simulate=simulate)


# ---------------------------------------------------------------------------
# Two moons: bimodal crescent-shaped posterior.
# ---------------------------------------------------------------------------

def two_moons_task(radius_mean: float = 0.1, radius_std: float = 0.01, offset: float = 0.25) -> TaskSpec:
    prior = PriorSpec.box_uniform([-1.0, -1.0], [1.0, 1.0])

    def simulate(theta, rng):
        a = rng.uniform(-0.5 * math.pi, 0.5 * math.pi)
        r = rng.normal(radius_mean, radius_std)
        p = np.array([r * math.cos(a) + offset, r * math.sin(a)])
        shift = np.array(
            [-abs(theta[0] + theta[1]) / math.sqrt(2.0), (-theta[0] + theta[1]) / math.sqrt(2.0)]
        )
        return p + shift

    return TaskSpec(name="two_moons", d_theta=2, d_x=2, prior=prior, simulate=simulate)


# ---------------------------------------------------------------------------
# ODE tasks, integrated with fixed-step RK4.
# ---------------------------------------------------------------------------

def _rk4(deriv, y0: np.ndarray, t_end: float, n_steps: int) -> np.ndarray:
    """Integrate y' = deriv(y) from 0 to t_end; returns (n_steps+1, dim) states."""
    h = t_end / n_steps
    out = np.empty((n_steps + 1, len(y0)))
    y = np.asarray(y0, dtype=float)
    out[0] = y
    # Overflow to inf/nan is an expected outcome (flagged invalid), not an error.
    with np.errstate(over="ignore", invalid="ignore"):
        for i in range(n_steps):
            k1 = deriv(y)
            k2 = deriv(y + 0.5 * h * k1)
            k3 = deriv(y + 0.5 * h * k2)
            k4 = deriv(y + h * k3)
            y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            if not np.all(np.isfinite(y)):
                out[i + 1 :] = np.nan
                return out
            out[i + 1] = y
    return out


def _obs_indices(n_steps: int, n_obs: int) -> np.ndarray:
    return np.round(np.linspace(0, n_steps, n_obs)).astype(int)


def sir_task(
    population: float = 1e6,
    horizon: float = 160.0,
    n_steps: int = 1000,
    n_obs: int = 10,
    noise_scale: float = 0.05,
) -> TaskSpec:
    """Epidemic SIR model; theta = (contact rate, recovery rate), x = infected fractions."""
    prior = PriorSpec.box_uniform([0.05, 0.025], [1.5, 0.25])

    def simulate(theta, rng):
        beta, gamma = float(theta[0]), float(theta[1])

        def deriv(y):
            s, i = y
            return np.array([-beta * s * i / population, beta * s * i / population - gamma * i])

        traj = _rk4(deriv, np.array([population - 1.0, 1.0]), horizon, n_steps)
        infected = traj[_obs_indices(n_steps, n_obs), 1] / population
        if noise_scale > 0:
            infected = infected * np.exp(noise_scale * rng.standard_normal(n_obs))
        return infected

    return TaskSpec(name="sir", d_theta=2, d_x=n_obs, prior=prior, simulate=simulate)


def lotka_volterra_task(
    init_prey: float = 30.0,
    init_predator: float = 1.0,
    horizon: float = 20.0,
    n_steps: int = 1000,
    n_obs: int = 10,
    noise_scale: float = 0.05,
) -> TaskSpec:
    """Predator-prey dynamics; theta = (alpha, beta, gamma, delta), x = both series."""
    prior = PriorSpec.box_uniform([0.4, 0.01, 0.4, 0.01], [1.6, 0.15, 1.6, 0.15])

    def simulate(theta, rng):
        alpha, beta, gamma, delta = (float(v) for v in theta)

        def deriv(y):
            p, q = y
            return np.array([alpha * p - beta * p * q, -gamma * q + delta * p * q])

        traj = _rk4(deriv, np.array([init_prey, init_predator]), horizon, n_steps)
        idx = _obs_indices(n_steps, n_obs)
        out = np.concatenate([traj[idx, 0], traj[idx, 1]])
        if not np.all(np.isfinite(out)):
            return np.full(2 * n_obs, np.nan)
        if noise_scale > 0:
            out = out * np.exp(noise_scale * rng.standard_normal(2 * n_obs))
        return out

    return TaskSpec(name="lotka_volterra", d_theta=4, d_x=2 * n_obs, prior=prior, simulate=simulate)


# ---------------------------------------------------------------------------
# 2-D Gaussian-means misspecification benchmark.
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MisspecConfig:
    """Misspecification knobs: prior mean shift, prior scale, contamination fraction.

    ``tau_m`` scales the prior covariance (tau_m * I); ``lambda_m`` is the
    fraction of observation rows replaced by elementwise Beta(2, 5) draws.
    At (0, 1, 0) the generator is the well-specified truth.
    """

    mu_m: float = 0.0
    tau_m: float = 1.0
    lambda_m: float = 0.0

    def __post_init__(self):
        if self.tau_m <= 0:
            raise ValueError("tau_m must be positive")
        if not 0.0 <= self.lambda_m <= 1.0:
            raise ValueError("lambda_m must lie in [0, 1]")


def sample_misspecified(
    config: MisspecConfig, n_obs: int, n_sims: int, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    """Draw (mu, observation set) pairs from the misspecified generator.

    Returns ``mus`` with shape (n_sims, 2) and ``obs`` with shape
    (n_sims, n_obs, 2).
    """
    rng = np.random.default_rng(derive_seed(seed, 1))
    std = math.sqrt(config.tau_m)
    mus = rng.normal(config.mu_m, std, size=(n_sims, 2))
    obs = rng.normal(mus[:, None, :], 1.0, size=(n_sims, n_obs, 2))
    if config.lambda_m > 0:
        contaminate = rng.random(size=(n_sims, n_obs)) < config.lambda_m
        beta_draws = rng.beta(2.0, 5.0, size=(n_sims, n_obs, 2))
        obs = np.where(contaminate[:, :, None], beta_draws, obs)
    return mus, obs


def misspec_reference_posterior(obs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Well-specified conjugate posterior for the mean given one observation set.

    With prior N(0, I) and likelihood N(mu, I), the posterior after n
    observations is N(n*xbar/(n+1), I/(n+1)).
    """
    obs = np.atleast_2d(obs)
    n = obs.shape[0]
    mean = n * obs.mean(axis=0) / (n + 1.0)
    cov = np.eye(obs.shape[1]) / (n + 1.0)
    return mean, cov


def misspecified_gaussian_task(config: MisspecConfig = MisspecConfig(), n_obs: int = 10) -> TaskSpec:
    """TaskSpec wrapper: theta = mu (2-D), x = flattened observation set."""
    std = math.sqrt(config.tau_m)
    prior = PriorSpec.diagonal_gaussian(np.full(2, config.mu_m), std)

    def simulate(theta, rng):
        obs = rng.normal(theta, 1.0, size=(n_obs, 2))
        if config.lambda_m > 0:
            contaminate = rng.random(size=n_obs) < config.lambda_m
            beta_draws = rng.beta(2.0, 5.0, size=(n_obs, 2))
            obs = np.where(contaminate[:, None], beta_draws, obs)
        return obs.reshape(-1)

    return TaskSpec(
        name="misspecified_gaussian", d_theta=2, d_x=2 * n_obs, prior=prior, simulate=simulate
    )


# ---------------------------------------------------------------------------
# Synthetic chain tasks with closed-form joint densities (used to probe
# autoregressive order effects; roles are swapped so the "parameter" is the
# chain output y and the conditionals are known exactly).
# ---------------------------------------------------------------------------

class NonlinearChainDensity:
    """Closed-form density of the 4-step Gaussian chain given covariates."""

    def log_prob(self, ys: np.ndarray, x_o: np.ndarray) -> np.ndarray:
        ys = np.atleast_2d(np.asarray(ys, dtype=float))
        x1, x2 = float(x_o[0]), float(x_o[1])
        y1, y2, y3, y4 = ys[:, 0], ys[:, 1], ys[:, 2], ys[:, 3]
        lp = sp_stats.norm.logpdf(y1, loc=x1)
        lp = lp + sp_stats.norm.logpdf(y2, loc=np.sin(y1 + x2))
        lp = lp + sp_stats.norm.logpdf(y3, loc=y2**2 + y1)
        lp = lp + sp_stats.norm.logpdf(y4, loc=y1 * y2 + y3)
        return lp


def _nonlinear_chain_draw(xs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = xs.shape[0]
    y1 = rng.normal(xs[:, 0], 1.0)
    y2 = rng.normal(np.sin(y1 + xs[:, 1]), 1.0)
    y3 = rng.normal(y2**2 + y1, 1.0)
    y4 = rng.normal(y1 * y2 + y3, 1.0)
    return np.column_stack([y1, y2, y3, y4])


def nonlinear_chain_task() -> TaskSpec:
    prior = PriorSpec.diagonal_gaussian(np.zeros(4), 3.0)

    def joint_sampler(n, rng):
        xs = rng.standard_normal((n, 2))
        return _nonlinear_chain_draw(xs, rng), xs

    return TaskSpec(
        name="nonlinear_chain",
        d_theta=4,
        d_x=2,
        prior=prior,
        simulate=None,
        analytic_posterior=NonlinearChainDensity(),
        joint_sampler=joint_sampler,
    )


class MixedChainDensity:
    """Closed-form density of the Gamma/Uniform/Beta chain given covariates."""

    def log_prob(self, ys: np.ndarray, x_o: np.ndarray) -> np.ndarray:
        ys = np.atleast_2d(np.asarray(ys, dtype=float))
        x1, x2 = float(x_o[0]), float(x_o[1])
        y1, y2, y3 = ys[:, 0], ys[:, 1], ys[:, 2]
        lp = sp_stats.gamma.logpdf(y1, a=1.0 + abs(x1), scale=1.0)
        upper = 2.0 * y1 + abs(x2)
        lp = lp + np.where((y2 >= 0) & (y2 <= upper), -np.log(upper), -np.inf)
        lp = lp + sp_stats.beta.logpdf(y3, a=1.0 + y1, b=2.0 + y2)
        return lp


def _mixed_chain_draw(xs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    y1 = rng.gamma(shape=1.0 + np.abs(xs[:, 0]), scale=1.0)
    y2 = rng.uniform(0.0, 2.0 * y1 + np.abs(xs[:, 1]))
    y3 = rng.beta(1.0 + y1, 2.0 + y2)
    return np.column_stack([y1, y2, y3])


def mixed_chain_task() -> TaskSpec:
    prior = PriorSpec.box_uniform([0.0, 0.0, 0.0], [20.0, 40.0, 1.0])

    def joint_sampler(n, rng):
        xs = rng.uniform(-2.0, 2.0, size=(n, 2))
        return _mixed_chain_draw(xs, rng), xs

    return TaskSpec(
        name="mixed_chain",
        d_theta=3,
        d_x=2,
        prior=prior,
        simulate=None,
        analytic_posterior=MixedChainDensity(),
        joint_sampler=joint_sampler,
    )


_REGISTRY: dict[str, Callable[[], TaskSpec]] = {
    "gaussian_linear": gaussian_linear_task,
    "gaussian_mixture": gaussian_mixture_task,
    "two_moons": two_moons_task,
    "sir": sir_task,
    "lotka_volterra": lotka_volterra_task,
    "misspecified_gaussian": misspecified_gaussian_task,
    "nonlinear_chain": nonlinear_chain_task,
    "mixed_chain": mixed_chain_task,
}


def task_names() -> list[str]:
    return sorted(_REGISTRY)


def get_task(name: str, **kwargs) -> TaskSpec:
    """Look up a task by registry name; kwargs are forwarded to its factory."""
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise KeyError(f"unknown task {name!r}; available: {', '.join(task_names())}") from None
    return factory(**kwargs)
