"""Seeded sampling of MDPs from a prior.

Draw order for one MDP (fixed, so results are bit-reproducible): every
transition row in ``(s, a)`` row-major order, each row as one Gamma draw
per next state; then one standard normal per ``(s, a)`` for the rewards,
also row-major.  A normal is consumed even where the reward variance is
zero, so the stream layout does not depend on the prior's values.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidPriorError
from .rng import MASK64, Xoshiro256, derive_replicate_seed, dirichlet_row_into, sample_mdp_into
from .types import PriorSpec, SampledMdp, Violation, check_prior

__all__ = ["SeedSpec", "derive_replicate_seed", "sample_dirichlet_row", "sample_mdp"]


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    replicate_index: int = 0

    def __post_init__(self):
        if not 0 <= self.master_seed <= MASK64:
            raise ValueError("master_seed must be an unsigned 64-bit integer")
        if self.replicate_index < 0:
            raise ValueError("replicate_index must be nonnegative")

    @property
    def seed(self) -> int:
        return derive_replicate_seed(self.master_seed, self.replicate_index)


def sample_dirichlet_row(alpha_row, rng: Xoshiro256) -> np.ndarray:
    """One Dirichlet(alpha_row) draw as normalised Gamma variates."""
    alpha = np.ascontiguousarray(alpha_row, dtype=float)
    if alpha.ndim != 1 or alpha.size == 0 or not np.all(alpha > 0) or not np.all(np.isfinite(alpha)):
        raise InvalidPriorError([Violation("alpha", None, "concentration entries must be positive and finite")])
    out = np.empty_like(alpha)
    dirichlet_row_into(rng.state, rng.cache, alpha, out)
    return out


def sample_mdp(prior: PriorSpec, seed: int, validate: bool = True) -> SampledMdp:
    """Draw one MDP: each row ~ Dirichlet(alpha[s, a]), each reward ~ N(mu, sigma^2).

    ``validate=False`` skips the prior check for callers that already ran it
    (the ensemble runner validates once per run).
    """
    if validate:
        check_prior(prior)
    rng = Xoshiro256(seed)
    p = np.empty_like(prior.alpha, dtype=float)
    r = np.empty(prior.shape)
    sample_mdp_into(
        rng.state,
        rng.cache,
        np.ascontiguousarray(prior.alpha),
        np.ascontiguousarray(prior.reward_mean),
        np.sqrt(prior.reward_var),
        p,
        r,
    )
    return SampledMdp(p, r, prior.discount)
