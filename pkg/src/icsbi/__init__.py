"""Training-free simulation-based inference with in-context density estimators.

The package turns a pluggable 1-D in-context conditional density backend
(a built-in kernel reference implementation, or any external process speaking
the wire protocol) into a full posterior-inference engine: relevance-filtered
contexts, autoregressive sampling and density evaluation, ratio-trick density
surrogates, truncated sequential acquisition, and mixture-partitioned
unconditional density estimation, plus the metrics used to judge them.
"""

from .backends import (
    BackendCapabilities,
    BackendError,
    ContextSet,
    InContextBackend,
    PredictiveDistribution1D,
    ReferenceBackend,
    make_backend,
)
from .data import (
    PriorSpec,
    SimulationDataset,
    StandardizationStats,
    derive_seed,
    load_dataset,
    save_dataset,
    standardize,
)
from .engine import (
    FilterConfig,
    PosteriorSampleSet,
    filter_context,
    log_prob_autoregressive,
    npe_sample,
    sample_posterior,
)
from .metrics import (
    c2st,
    distance_correlation_loss,
    energy_score,
    predictive_distance,
    sbc,
)
from .ratio import RatioEstimator, build_ratio_estimator, ratio_log_density
from .sequential import (
    TsnpeConfig,
    TsnpeResult,
    estimate_hdr_threshold,
    restricted_prior,
    run_tsnpe,
    sir_resample,
    truncated_prior_rejection_sample,
)
from .tasks import TaskSpec, get_task, sample_joint, task_names
from .unconditional import fit_mixture, fit_unconditional, kmeans_partition

__version__ = "0.1.0"
