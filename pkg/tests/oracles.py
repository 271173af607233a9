"""Independent brute-force oracles shared by the test suite.

These deliberately avoid the library code paths they are used to check.
"""

import numpy as np


def brute_force_filter(xs: np.ndarray, x_o: np.ndarray, n_keep: int) -> np.ndarray:
    """Indices of the n_keep rows closest to x_o after column standardization.

    Full sort of all distances; ties break toward the lower row index.
    """
    mean = xs.mean(axis=0)
    std = xs.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    z = (xs - mean) / std
    zo = (np.asarray(x_o, dtype=float) - mean) / std
    dist = np.sqrt(((z - zo) ** 2).sum(axis=1))
    order = sorted(range(len(dist)), key=lambda i: (dist[i], i))
    return np.sort(np.array(order[:n_keep]))


def rejection_abc(task, x_o, n_draws: int, accept_quantile: float, seed: int) -> np.ndarray:
    """Plain rejection ABC: keep the thetas whose simulations land closest to x_o."""
    from icsbi.tasks import sample_joint

    data = sample_joint(task, n_draws, seed)
    d = np.linalg.norm(data.xs - np.asarray(x_o), axis=1)
    eps = np.quantile(d, accept_quantile)
    return data.thetas[d <= eps]


def ols_prediction(features: np.ndarray, targets: np.ndarray, query: np.ndarray) -> float:
    """Ordinary least squares fit on the full context, evaluated at one query."""
    x = np.column_stack([np.ones(len(features)), features])
    beta = np.linalg.lstsq(x, targets, rcond=None)[0]
    return float(beta[0] + np.asarray(query) @ beta[1:])


def numeric_posterior_mean_2d(obs: np.ndarray, half_width: float = 4.0, n_grid: int = 401):
    """Grid-integrated posterior mean for prior N(0, I), likelihood N(mu, I), 2-D."""
    obs = np.atleast_2d(obs)
    axis = np.linspace(-half_width, half_width, n_grid)
    means = []
    for j in range(2):
        log_post = -0.5 * axis**2
        for x in obs[:, j]:
            log_post = log_post - 0.5 * (x - axis) ** 2
        w = np.exp(log_post - log_post.max())
        means.append(float((axis * w).sum() / w.sum()))
    return np.array(means)
