"""Sequential-hurdle Bayesian tree ensembles for outcomes on [0, 1]."""

__version__ = "0.1.0"

from .errors import DataIOError, HobzError, NumericError, ValidationError
from .forest import Forest, Hyperparams, LeafParams, SplitGrid, SplitRule, Tree, assign_leaf, propose_move, tree_log_prior
from .inference import (
    MetricsReport,
    PermTestResult,
    PiteResult,
    compute_metrics,
    compute_pite,
    expected_outcome,
    expected_partial_outcome,
    fit_linear_hobz,
    permutation_test,
    predict_draws,
)
from .likelihood import beta_inv_fn, beta_leaf_log_marginal, probit_leaf_log_marginal, tree_log_posterior
from .sampler import Dataset, PosteriorDraws, SamplerState, Schedule, mcmc_iteration, run_chain
from .simgen import SimConfig, SimTruth, build_interaction_expansion, generate_dataset, scenario_presets
