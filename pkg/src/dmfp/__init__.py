"""Mean-field propagation of Q-value posterior moments for Bayesian MDPs, with Monte-Carlo validation."""

__version__ = "0.1.0"

from .bellman import SolveResult, backup_step, finite_horizon, greedy_policy, policy_backup_step, solve_policy_q, solve_q
from .engine import (
    DmfpResult,
    GumbelConstants,
    IidParams,
    MaxMomentBackend,
    dmfp_policy_step,
    general_dmfp_step,
    gumbel_constants,
    iid_dmfp_step,
    iid_fixed_point,
    jacobian_spectrum,
    max_moments_general,
    max_moments_identical,
    run_dmfp,
)
from .harness import compare_theory, cross_pair_correlation, ks_normality, qq_points, run_ensemble
from .sampler import SeedSpec, derive_replicate_seed, sample_dirichlet_row, sample_mdp
from .types import MomentField, Policy, PriorSpec, QTable, SampledMdp, dirichlet_covariance, dirichlet_mean, validate_prior
