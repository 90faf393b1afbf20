"""Dynamic mean field programming: moment propagation for Q-value posteriors.

The state of the recursion is a :class:`MomentField` holding the mean and
variance of every Q-value.  One step of the optimal-control recursion needs
the first two moments of ``max_a' Q(s', a')`` for every next state; those
come from a :class:`MaxMomentBackend`:

``quadrature``
    CDF of the maximum of independent Gaussians is the product of their
    CDFs; the moments follow from one-dimensional integrals of the survival
    function, evaluated with Simpson's rule.

``gumbel``
    Type-I extreme value approximation for identically distributed
    Q-values, ``m = mu + sqrt(nu) (b + a gamma)`` and
    ``v = (pi^2 / 12) a nu``.  This ``v`` is the variance increment of the
    closed-form i.i.d. recursion, not the variance of a Gumbel law (which
    would be ``(pi^2 / 6) a^2 nu``).

With a symmetric ``alpha = 1/N`` prior the Dirichlet factor
``sum_s' Cov[P_s'|sa, P_s'|sa]`` tends to 1/2.  The gumbel increment already
carries it; a quadrature variance is multiplied by it in the i.i.d. step.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import List, Optional, Tuple, Union

import numpy as np

from .errors import InstabilityError, InvalidArgumentError
from .numerics import bisect_root, simpson_doubling, std_normal_cdf
from .types import MomentField, Policy, PriorSpec, check_prior

__all__ = [
    "EULER_GAMMA",
    "DIRICHLET_LIMIT_FACTOR",
    "GumbelConstants",
    "IidParams",
    "MaxMomentBackend",
    "DmfpResult",
    "gumbel_constants",
    "max_moments_general",
    "max_moments_identical",
    "iid_dmfp_step",
    "iid_fixed_point",
    "jacobian_spectrum",
    "general_dmfp_step",
    "dmfp_policy_step",
    "run_dmfp",
    "is_uniform_inverse_n",
]

EULER_GAMMA = 0.5772156649015329
# lim_{N -> inf} sum_s' C_{s's'|sa} for alpha = 1/N
DIRICHLET_LIMIT_FACTOR = 0.5


@dataclass(frozen=True)
class GumbelConstants:
    action_count: int
    b: float
    a: float
    gamma_em: float = EULER_GAMMA

    @property
    def mean_shift(self) -> float:
        """``b + a * gamma``: standardised mean of the maximum."""
        return self.b + self.a * self.gamma_em


@lru_cache(maxsize=None)
def gumbel_constants(action_count: int) -> GumbelConstants:
    """Normalising constants for the maximum of ``action_count`` standard normals.

    ``b`` solves ``b sqrt(2 pi) exp(b^2 / 2) = |A|`` (bisection on the log of
    that identity over ``[1e-8, 10]``) and ``a = b / (b^2 + 1)``.
    """
    if int(action_count) != action_count or action_count < 1:
        raise InvalidArgumentError(f"action count must be a positive integer, got {action_count!r}")
    n = int(action_count)
    log_target = math.log(n) - 0.5 * math.log(2.0 * math.pi)
    b = bisect_root(lambda x: math.log(x) + 0.5 * x * x - log_target, 1e-8, 10.0, tol=0.0)
    return GumbelConstants(n, b, b / (b * b + 1.0))


@dataclass(frozen=True)
class IidParams:
    discount: float
    reward_mean: float
    reward_var: float
    action_count: int

    def __post_init__(self):
        if not 0.0 <= self.discount < 1.0:
            raise InvalidArgumentError(f"discount must lie in [0, 1), got {self.discount}")
        if self.reward_var < 0:
            raise InvalidArgumentError("reward variance must be nonnegative")
        if self.action_count < 1:
            raise InvalidArgumentError("action count must be >= 1")

    @classmethod
    def from_prior(cls, prior: PriorSpec) -> "IidParams":
        if not prior.is_iid:
            raise InvalidArgumentError("prior is not identically distributed across (s, a)")
        return cls(prior.discount, float(prior.reward_mean.flat[0]), float(prior.reward_var.flat[0]), prior.num_actions)


@dataclass(frozen=True)
class MaxMomentBackend:
    variant: str = "quadrature"
    tail_width: float = 8.0
    tol: float = 1e-10

    def __post_init__(self):
        if self.variant not in ("gumbel", "quadrature"):
            raise InvalidArgumentError(f"unknown backend {self.variant!r}")
        if self.tail_width < 6:
            raise InvalidArgumentError("tail width must be >= 6 standard deviations")


QUADRATURE = MaxMomentBackend("quadrature")
GUMBEL = MaxMomentBackend("gumbel")


def _backend(b: Union[None, str, MaxMomentBackend]) -> MaxMomentBackend:
    if b is None:
        return QUADRATURE
    if isinstance(b, str):
        return MaxMomentBackend(b)
    return b


# ---------------------------------------------------------------------------
# Moments of the maximum
# ---------------------------------------------------------------------------


def _quadrature_max_moments(mu: np.ndarray, nu: np.ndarray, width: float, tol: float) -> Tuple[float, float]:
    if mu.size == 1:
        return float(mu[0]), float(nu[0])
    sd = np.sqrt(nu)
    # near-degenerate components are exact steps; keeping them as Gaussians leaves a jump inside a panel
    step_scale = max(1e-10 * float(sd.max()), 1e-100 * max(1.0, float(np.abs(mu).max())))
    pos = sd > step_scale
    if not np.any(pos):
        return float(mu.max()), 0.0
    floor = float(mu[~pos].max()) if np.any(~pos) else -np.inf
    # shift to the largest mean so that adding a constant to all inputs is exact
    c = float(mu.max())
    mp, sp = mu[pos] - c, sd[pos]
    lo = max(float(np.min(mp - width * sp)), floor - c)
    hi = float(np.max(mp + width * sp))
    if lo >= hi:
        return floor, 0.0
    # split at every component's window edge so near-degenerate CDFs get their own panels
    edges = np.concatenate(([lo, hi], mp - width * sp, mp + width * sp))
    edges = np.unique(np.clip(edges, lo, hi))
    keep = np.concatenate(([True], np.diff(edges) > 1e-12 * (hi - lo)))
    edges = edges[keep]
    if edges[-1] < hi:
        edges = np.append(edges, hi)
    else:
        edges[-1] = hi

    inv_sd = 1.0 / sp

    def survival(u):
        z = (u[..., None] - mp) * inv_sd
        tail = 1.0 - np.prod(std_normal_cdf(z), axis=-1)
        return np.stack((tail, 2.0 * u * tail))

    i1, i2 = simpson_doubling(survival, edges[:-1], edges[1:], tol)
    m_shift = lo + i1
    second = lo * lo + i2
    v = max(second - m_shift * m_shift, 0.0)
    return m_shift + c, v


def max_moments_general(means, vars, backend: Union[None, str, MaxMomentBackend] = None) -> Tuple[float, float]:
    """Mean and variance of the maximum of independent Gaussians ``N(means[i], vars[i])``.

    Uses ``P(max <= u) = prod_i Phi((u - mu_i) / sigma_i)`` integrated over
    ``[min(mu - w sigma), max(mu + w sigma)]``; zero-variance entries enter
    as step functions.  A ``gumbel`` backend is only defined when all
    entries are identical.
    """
    mu = np.atleast_1d(np.asarray(means, dtype=float))
    nu = np.atleast_1d(np.asarray(vars, dtype=float))
    if mu.shape != nu.shape or mu.ndim != 1 or mu.size == 0:
        raise InvalidArgumentError("means and vars must be non-empty vectors of equal length")
    if np.any(nu < 0) or not np.all(np.isfinite(mu)) or not np.all(np.isfinite(nu)):
        raise InvalidArgumentError("vars must be nonnegative and all inputs finite")
    be = _backend(backend)
    if be.variant == "gumbel":
        if np.any(mu != mu[0]) or np.any(nu != nu[0]):
            raise InvalidArgumentError("gumbel backend requires identical entries; use quadrature")
        return max_moments_identical(mu[0], nu[0], mu.size, be)
    return _quadrature_max_moments(mu, nu, be.tail_width, be.tol)


def max_moments_identical(mu: float, nu: float, action_count: int, backend: Union[None, str, MaxMomentBackend] = None) -> Tuple[float, float]:
    """Moments of the maximum of ``action_count`` i.i.d. ``N(mu, nu)`` variables."""
    if nu < 0:
        raise InvalidArgumentError("variance must be nonnegative")
    be = _backend(backend)
    if be.variant == "gumbel":
        k = gumbel_constants(action_count)
        return mu + math.sqrt(nu) * k.mean_shift, (math.pi ** 2 / 12.0) * k.a * nu
    return _quadrature_max_moments(np.full(action_count, float(mu)), np.full(action_count, float(nu)), be.tail_width, be.tol)


def _state_max_moments(mean: np.ndarray, var: np.ndarray, backend: MaxMomentBackend):
    """Per-state (m, v) over actions, reusing results for repeated rows."""
    n = mean.shape[0]
    m = np.empty(n)
    v = np.empty(n)
    seen = {}
    for s in range(n):
        key = mean[s].tobytes() + var[s].tobytes()
        hit = seen.get(key)
        if hit is None:
            hit = max_moments_general(mean[s], var[s], backend)
            seen[key] = hit
        m[s], v[s] = hit
    return m, v


# ---------------------------------------------------------------------------
# Closed-form i.i.d. recursions
# ---------------------------------------------------------------------------


def iid_dmfp_step(mu: float, nu: float, params: IidParams, consts: Optional[GumbelConstants] = None, backend=None) -> Tuple[float, float]:
    """One i.i.d. step from the moments ``(m, v)`` of the maximum.

    The default gumbel backend gives exactly
    ``mu' = mu_r + beta (mu + sqrt(nu) (b + a gamma))`` and
    ``nu' = sigma_r^2 + beta^2 (pi^2 / 12) a nu``.  With the quadrature
    backend ``v`` is the true variance of the maximum and the update is
    ``nu' = sigma_r^2 + beta^2 v / 2``, the large-N limit of the general step
    under ``alpha = 1/N``.
    """
    if nu < 0:
        raise InvalidArgumentError("variance must be nonnegative")
    be = _backend(backend) if backend is not None else GUMBEL
    if be.variant == "gumbel":
        k = consts or gumbel_constants(params.action_count)
        m = mu + math.sqrt(nu) * k.mean_shift
        v = (math.pi ** 2 / 12.0) * k.a * nu
    else:
        m, v = max_moments_identical(mu, nu, params.action_count, be)
        v *= DIRICHLET_LIMIT_FACTOR
    beta = params.discount
    return params.reward_mean + beta * m, params.reward_var + beta * beta * v


def _variance_gain(params: IidParams, consts: GumbelConstants) -> float:
    return params.discount ** 2 * (math.pi ** 2 / 12.0) * consts.a


def iid_fixed_point(params: IidParams, consts: Optional[GumbelConstants] = None) -> Tuple[float, float]:
    """Closed-form fixed point: solve the variance equation, then the mean."""
    k = consts or gumbel_constants(params.action_count)
    gain = _variance_gain(params, k)
    if not gain < 1.0:
        raise InstabilityError(f"variance recursion gain {gain} >= 1 has no finite fixed point")
    nu = params.reward_var / (1.0 - gain)
    beta = params.discount
    mu = (params.reward_mean + beta * math.sqrt(nu) * k.mean_shift) / (1.0 - beta)
    return mu, nu


def jacobian_spectrum(params: IidParams, consts: Optional[GumbelConstants], nu_star: float):
    """Eigenvalues (descending) and Jacobian of the i.i.d. map at ``(mu*, nu*)``.

    The map is upper triangular in ``(mu, nu)``: the mean update does not
    feed the variance, so the eigenvalues are the diagonal entries
    ``beta`` and ``beta^2 (pi^2 / 12) a``.
    """
    if not nu_star > 0:
        raise InvalidArgumentError("Jacobian needs a positive fixed-point variance")
    k = consts or gumbel_constants(params.action_count)
    beta = params.discount
    jac = np.array(
        [
            [beta, beta * k.mean_shift / (2.0 * math.sqrt(nu_star))],
            [0.0, _variance_gain(params, k)],
        ]
    )
    eig = np.sort(np.diag(jac).copy())[::-1]
    return eig, jac


# ---------------------------------------------------------------------------
# General (non-identical) recursions
# ---------------------------------------------------------------------------


def _propagate(prior: PriorSpec, m: np.ndarray, v: np.ndarray) -> MomentField:
    """Push next-state max moments through the Dirichlet-averaged backup.

    Mean: ``mu_r + beta sum_s' pbar m``.  Variance: ``sigma_r^2 + beta^2 *
    sum_{s', s''} C_{s's''} E[M_s' M_s'']`` with ``E[M_s' M_s''] = m' m'' +
    delta v'``, which collapses to
    ``sum_s' C_{s's'} v_s' + (sum pbar m^2 - (sum pbar m)^2) / (1 + alpha_0)``.
    """
    n, k = prior.shape
    beta = prior.discount
    pbar = prior.transition_mean.reshape(n * k, n)
    inv = (1.0 / (1.0 + prior.concentration)).reshape(n * k)
    mean_next = pbar @ m
    diag_cov_v = (pbar @ v - prior.transition_mean_sq.reshape(n * k, n) @ v) * inv
    mc = m - m.mean()
    centred = pbar @ mc
    spread = (pbar @ (mc * mc) - centred * centred) * inv
    scale = max(1.0, float(np.max(mc * mc)))
    if np.any(spread < -1e-12 * scale) or np.any(diag_cov_v < -1e-12 * max(1.0, float(v.max()))):
        raise ArithmeticError("negative variance contribution beyond rounding")
    var = prior.reward_var + beta * beta * (np.maximum(spread, 0.0) + np.maximum(diag_cov_v, 0.0)).reshape(n, k)
    mean = prior.reward_mean + beta * mean_next.reshape(n, k)
    return MomentField(mean, var)



def general_dmfp_step(field: MomentField, prior: PriorSpec, backend: Union[None, str, MaxMomentBackend] = None) -> MomentField:
    """One DMFP step for Q-value iteration with arbitrary Dirichlet/Gaussian priors."""
    if field.mean.shape != prior.shape:
        raise InvalidArgumentError(f"field shape {field.mean.shape} != prior shape {prior.shape}")
    m, v = _state_max_moments(field.mean, field.var, _backend(backend))
    return _propagate(prior, m, v)


def dmfp_policy_step(field: MomentField, prior: PriorSpec, pi: Policy) -> MomentField:
    """DMFP step for evaluating a fixed policy: next-state moments are those of ``Q(s', pi(s'))``."""
    if field.mean.shape != prior.shape:
        raise InvalidArgumentError(f"field shape {field.mean.shape} != prior shape {prior.shape}")
    if pi.action.shape != (prior.num_states,) or np.any(pi.action >= prior.num_actions):
        raise InvalidArgumentError("policy does not match the prior's state/action spaces")
    idx = np.arange(prior.num_states)
    return _propagate(prior, field.mean[idx, pi.action], field.var[idx, pi.action])


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


@dataclass
class DmfpResult:
    """``fields[n - 1]`` holds the moments after ``n`` steps from ``(0, 0)``."""

    fields: List[MomentField]
    converged: bool
    closed_form: bool = False

    @property
    def iterations(self) -> int:
        return len(self.fields)

    @property
    def fixed_point(self) -> MomentField:
        return self.fields[-1]

    def at(self, iteration: int) -> MomentField:
        """Moments after ``iteration`` steps; past convergence the final field is reused."""
        if iteration < 1:
            raise InvalidArgumentError("iterations are numbered from 1")
        if iteration <= len(self.fields):
            return self.fields[iteration - 1]
        if not self.converged:
            raise InvalidArgumentError(f"trajectory stops at {len(self.fields)} without converging")
        return self.fields[-1]


def is_uniform_inverse_n(prior: PriorSpec) -> bool:
    n = prior.num_states
    return bool(np.all(np.abs(prior.alpha * n - 1.0) <= 1e-12))


def run_dmfp(
    prior: PriorSpec,
    mode: Union[str, Policy] = "optimal",
    backend: Union[None, str, MaxMomentBackend] = None,
    max_iters: int = 2000,
    tol: float = 1e-12,
) -> DmfpResult:
    """Iterate DMFP from zero moments until both tables move by at most ``tol``.

    ``mode`` is ``"optimal"`` or a :class:`Policy` for policy evaluation.
    For an i.i.d. prior with ``alpha = 1/N`` and the gumbel backend the
    closed-form scalar recursion is used and broadcast to every ``(s, a)``.
    With zero discount the first step is already the fixed point.
    """
    check_prior(prior)
    be = _backend(backend)
    shape = prior.shape
    policy = None if isinstance(mode, str) else mode
    if policy is None and mode != "optimal":
        raise InvalidArgumentError(f"mode must be 'optimal' or a Policy, got {mode!r}")

    closed = policy is None and be.variant == "gumbel" and prior.is_iid and is_uniform_inverse_n(prior)
    if closed:
        params = IidParams.from_prior(prior)
        consts = gumbel_constants(prior.num_actions)

        def step(f: MomentField) -> MomentField:
            mu, nu = iid_dmfp_step(float(f.mean.flat[0]), float(f.var.flat[0]), params, consts)
            return MomentField(np.full(shape, mu), np.full(shape, nu))

    elif policy is None:
        step = lambda f: general_dmfp_step(f, prior, be)
    else:
        step = lambda f: dmfp_policy_step(f, prior, policy)

    field = MomentField.zeros(*shape)
    out: List[MomentField] = []
    converged = False
    for _ in range(max_iters):
        nxt = step(field)
        out.append(nxt)
        change = max(np.max(np.abs(nxt.mean - field.mean)), np.max(np.abs(nxt.var - field.var)))
        field = nxt
        if prior.discount == 0.0 or change <= tol:
            converged = True
            break
    return DmfpResult(out, converged, closed)
