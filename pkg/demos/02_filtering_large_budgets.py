"""Relevance filtering: use a 100k-simulation budget with a 2k context.

Context size is limited for in-context backends, but selecting the
simulations closest to the observation (in standardized feature space) keeps
the posterior unbiased while letting large budgets pay off.
"""

import numpy as np

from icsbi import (
    FilterConfig,
    ReferenceBackend,
    filter_context,
    get_task,
    sample_joint,
    sample_posterior,
)

backend = ReferenceBackend()
task = get_task("gaussian_linear")

data = sample_joint(task, n=100_000, seed=3)
rng = np.random.default_rng(1)
theta_true = task.prior.sample(1, rng)[0]
x_o = task.simulate(theta_true, rng)
exact_mean = task.analytic_posterior.mean(x_o)

for n_filter in (100, 500, 2_000):
    context = filter_context(data, x_o, FilterConfig(n_filter=n_filter))
    posterior = sample_posterior(context, x_o, 500, backend, seed=0)
    err = np.linalg.norm(posterior.mean() - exact_mean)
    print(f"n_filter={n_filter:>5}: context {len(context):>5} rows, mean error {err:.4f}")

# a random subset of the same size carries less information about x_o
subset = data.subset(np.sort(rng.choice(len(data), size=2_000, replace=False)))
posterior = sample_posterior(subset, x_o, 500, backend, seed=0)
print(f"random 2000-row context, mean error {np.linalg.norm(posterior.mean() - exact_mean):.4f}")
