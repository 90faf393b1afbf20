"""Domain types: priors, sampled MDPs, Q-tables, moment fields, and Dirichlet moments.

All arrays use a row-major ``(s, a, s')`` layout so that the transition row
for a fixed ``(s, a)`` is contiguous.  Instances are immutable: arrays are
copied on construction and marked read-only.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional, Tuple, Union

import numpy as np

from .errors import InvalidPriorError

__all__ = [
    "PriorSpec",
    "SampledMdp",
    "QTable",
    "MomentField",
    "Policy",
    "Violation",
    "dirichlet_mean",
    "dirichlet_covariance",
    "validate_prior",
    "check_prior",
]


def _frozen(x, dtype=float) -> np.ndarray:
    arr = np.array(x, dtype=dtype, copy=True, order="C")
    arr.setflags(write=False)
    return arr


# ---------------------------------------------------------------------------
# Dirichlet moments
# ---------------------------------------------------------------------------


def _check_alpha_row(alpha_row) -> np.ndarray:
    alpha = np.asarray(alpha_row, dtype=float)
    if alpha.ndim != 1 or alpha.size == 0:
        raise InvalidPriorError([Violation("alpha", None, "concentration must be a non-empty vector")])
    bad = np.flatnonzero(~(alpha > 0) | ~np.isfinite(alpha))
    if bad.size:
        raise InvalidPriorError(
            [Violation("alpha", (int(i),), f"entry {alpha[i]!r} is not a positive finite number") for i in bad]
        )
    return alpha


def dirichlet_mean(alpha_row) -> np.ndarray:
    """Mean of Dirichlet(alpha): ``alpha_i / sum(alpha)``."""
    alpha = _check_alpha_row(alpha_row)
    return alpha / alpha.sum()


def dirichlet_covariance(alpha_row) -> np.ndarray:
    """Covariance matrix of Dirichlet(alpha).

    ``C_ij = (delta_ij * p_i - p_i * p_j) / (1 + alpha_0)`` with ``p`` the mean
    and ``alpha_0`` the total concentration.  Rows sum to zero because the
    components are constrained to the simplex.
    """
    alpha = _check_alpha_row(alpha_row)
    a0 = alpha.sum()
    p = alpha / a0
    cov = -np.outer(p, p)
    cov[np.diag_indices_from(cov)] += p
    return cov / (1.0 + a0)


# ---------------------------------------------------------------------------
# Prior and validation
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    field: str
    where: Optional[Tuple[int, ...]]
    message: str

    def __str__(self) -> str:
        loc = "" if self.where is None else f"[{', '.join(map(str, self.where))}]"
        return f"{self.field}{loc}: {self.message}"


AlphaLike = Union[float, str, np.ndarray]


def _broadcast_alpha(alpha: AlphaLike, n: int, m: int) -> np.ndarray:
    if isinstance(alpha, str):
        if alpha.strip().replace(" ", "") != "1/N":
            raise ValueError(f"unrecognised alpha spec {alpha!r}; expected a number, '1/N', or an array")
        return np.full((n, m, n), 1.0 / n)
    arr = np.asarray(alpha, dtype=float)
    if arr.ndim == 0:
        return np.full((n, m, n), float(arr))
    if arr.shape == (n,):
        return np.broadcast_to(arr, (n, m, n)).copy()
    if arr.shape == (n, m):
        return np.repeat(arr[:, :, None], n, axis=2)
    if arr.shape == (n, m, n):
        return arr.copy()
    raise ValueError(f"alpha shape {arr.shape} does not broadcast to (S, A, S) = {(n, m, n)}")


def _broadcast_table(x, n: int, m: int, name: str) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        return np.full((n, m), float(arr))
    if arr.shape != (n, m):
        raise ValueError(f"{name} shape {arr.shape} does not match (S, A) = {(n, m)}")
    return arr


@dataclass(frozen=True, eq=False)
class PriorSpec:
    """Bayesian belief over MDPs: Dirichlet transition rows and Gaussian mean rewards."""

    num_states: int
    num_actions: int
    discount: float
    alpha: np.ndarray
    reward_mean: np.ndarray
    reward_var: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "alpha", _frozen(self.alpha))
        object.__setattr__(self, "reward_mean", _frozen(self.reward_mean))
        object.__setattr__(self, "reward_var", _frozen(self.reward_var))

    @classmethod
    def build(
        cls,
        num_states: int,
        num_actions: int,
        discount: float,
        alpha: AlphaLike = "1/N",
        reward_mean=0.0,
        reward_var=0.0,
    ) -> "PriorSpec":
        """Construct a prior, broadcasting scalar or partial ``alpha`` and reward tables.

        ``alpha`` may be a scalar, the string ``"1/N"``, a length-S vector used
        for every row, an (S, A) table of symmetric per-row concentrations, or
        the full (S, A, S) tensor.
        """
        n, m = int(num_states), int(num_actions)
        if n < 1 or m < 1:
            raise ValueError("num_states and num_actions must be positive")
        return cls(
            num_states=n,
            num_actions=m,
            discount=float(discount),
            alpha=_broadcast_alpha(alpha, n, m),
            reward_mean=_broadcast_table(reward_mean, n, m, "reward_mean"),
            reward_var=_broadcast_table(reward_var, n, m, "reward_var"),
        )

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.num_states, self.num_actions)

    @cached_property
    def concentration(self) -> np.ndarray:
        """Total concentration ``alpha_0(s, a)``."""
        return self.alpha.sum(axis=2)

    @cached_property
    def transition_mean(self) -> np.ndarray:
        """Expected transition tensor ``E[P(s'|s,a)]``."""
        return self.alpha / self.concentration[:, :, None]

    @cached_property
    def transition_mean_sq(self) -> np.ndarray:
        return self.transition_mean ** 2

    @cached_property
    def is_iid(self) -> bool:
        """True when every row shares one symmetric concentration and one reward prior."""
        return bool(
            np.all(self.alpha == self.alpha.flat[0])
            and np.all(self.reward_mean == self.reward_mean.flat[0])
            and np.all(self.reward_var == self.reward_var.flat[0])
        )


def validate_prior(spec: PriorSpec) -> list:
    """Return every invariant violation of ``spec`` (empty list when valid)."""
    out = []
    n, m = spec.num_states, spec.num_actions
    if not (0.0 <= spec.discount < 1.0) or not np.isfinite(spec.discount):
        out.append(Violation("discount", None, f"discount out of range [0, 1): {spec.discount!r}"))
    if spec.alpha.shape != (n, m, n):
        out.append(Violation("alpha", None, f"shape {spec.alpha.shape} != {(n, m, n)}"))
    else:
        for idx in np.argwhere(~(spec.alpha > 0) | ~np.isfinite(spec.alpha)):
            where = tuple(int(i) for i in idx)
            out.append(Violation("alpha", where, f"concentration {spec.alpha[where]!r} must be > 0"))
    for name in ("reward_mean", "reward_var"):
        tab = getattr(spec, name)
        if tab.shape != (n, m):
            out.append(Violation(name, None, f"shape {tab.shape} != {(n, m)}"))
            continue
        for idx in np.argwhere(~np.isfinite(tab)):
            out.append(Violation(name, tuple(int(i) for i in idx), "not finite"))
    if spec.reward_var.shape == (n, m):
        for idx in np.argwhere(spec.reward_var < 0):
            where = tuple(int(i) for i in idx)
            out.append(Violation("reward_var", where, f"variance {spec.reward_var[where]!r} < 0"))
    return out


def check_prior(spec: PriorSpec) -> PriorSpec:
    violations = validate_prior(spec)
    if violations:
        raise InvalidPriorError(violations)
    return spec


# ---------------------------------------------------------------------------
# Sampled MDPs and tables
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SampledMdp:
    """One concrete MDP: row-stochastic ``transitions[s, a, s']`` and mean rewards ``rewards[s, a]``."""

    transitions: np.ndarray
    rewards: np.ndarray
    discount: float

    def __post_init__(self):
        p = _frozen(self.transitions)
        r = _frozen(self.rewards)
        if p.ndim != 3 or p.shape[0] != p.shape[2] or r.shape != p.shape[:2]:
            raise ValueError(f"inconsistent shapes: transitions {p.shape}, rewards {r.shape}")
        if np.any(p < 0) or np.any(np.abs(p.sum(axis=2) - 1.0) > 1e-12):
            raise ValueError("transition rows must lie on the probability simplex")
        object.__setattr__(self, "transitions", p)
        object.__setattr__(self, "rewards", r)
        object.__setattr__(self, "discount", float(self.discount))

    @property
    def num_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def num_actions(self) -> int:
        return self.transitions.shape[1]


@dataclass(frozen=True, eq=False)
class QTable:
    values: np.ndarray

    def __post_init__(self):
        v = _frozen(self.values)
        if v.ndim != 2:
            raise ValueError(f"Q-table must be 2-D, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("Q-table entries must be finite")
        object.__setattr__(self, "values", v)

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, eq=False)
class MomentField:
    """Per-(s, a) posterior mean and variance of the Q-values."""

    mean: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        mu, nu = _frozen(self.mean), _frozen(self.var)
        if mu.shape != nu.shape or mu.ndim != 2:
            raise ValueError(f"mean/var shapes differ or are not 2-D: {mu.shape}, {nu.shape}")
        if np.any(nu < 0):
            raise ValueError("variances must be nonnegative")
        object.__setattr__(self, "mean", mu)
        object.__setattr__(self, "var", nu)

    @classmethod
    def zeros(cls, num_states: int, num_actions: int) -> "MomentField":
        return cls(np.zeros((num_states, num_actions)), np.zeros((num_states, num_actions)))


@dataclass(frozen=True, eq=False)
class Policy:
    """Deterministic stationary policy ``action[s]``."""

    action: np.ndarray
    num_actions: Optional[int] = field(default=None)

    def __post_init__(self):
        a = _frozen(self.action, dtype=np.int64)
        if a.ndim != 1:
            raise ValueError("policy must be a 1-D action table")
        if np.any(a < 0) or (self.num_actions is not None and np.any(a >= self.num_actions)):
            raise ValueError("policy action index out of range")
        object.__setattr__(self, "action", a)
