"""Exact dynamic-programming solvers on a sampled MDP."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Optional

import numpy as np

from .types import Policy, QTable, SampledMdp

__all__ = [
    "SolveResult",
    "backup_step",
    "policy_backup_step",
    "solve_q",
    "solve_policy_q",
    "greedy_policy",
    "finite_horizon",
    "stopping_threshold",
]


def _as_array(q) -> np.ndarray:
    return q.values if isinstance(q, QTable) else np.asarray(q, dtype=float)


def _flat_transitions(mdp: SampledMdp) -> np.ndarray:
    s, a, _ = mdp.transitions.shape
    return mdp.transitions.reshape(s * a, s)


def _backup_values(mdp: SampledMdp, v: np.ndarray) -> np.ndarray:
    # one matrix-vector product over all (s, a) rows; v is shared read-only
    s, a = mdp.rewards.shape
    return mdp.rewards + mdp.discount * (_flat_transitions(mdp) @ v).reshape(s, a)


def backup_step(q, mdp: SampledMdp) -> QTable:
    """One Bellman optimality backup: ``r + beta * P @ max_a' Q``."""
    return QTable(_backup_values(mdp, _as_array(q).max(axis=1)))


def policy_backup_step(q, mdp: SampledMdp, pi: Policy) -> QTable:
    """Bellman backup for a fixed policy: ``r + beta * P @ Q[s', pi(s')]``."""
    qa = _as_array(q)
    return QTable(_backup_values(mdp, qa[np.arange(qa.shape[0]), pi.action]))


def greedy_policy(q) -> Policy:
    """Greedy actions; ties go to the lowest action index."""
    qa = _as_array(q)
    return Policy(np.argmax(qa, axis=1), num_actions=qa.shape[1])


def stopping_threshold(eps: float, discount: float) -> float:
    """Successive-iterate gap guaranteeing ``||Q - Q*|| <= eps``."""
    if discount == 0.0:
        return np.inf
    return eps * (1.0 - discount) / (2.0 * discount)


@dataclass
class SolveResult:
    q: QTable
    iterations: int
    residual: float
    converged: bool
    diffs: List[float] = field(default_factory=list)
    snapshots: Dict[int, np.ndarray] = field(default_factory=dict)

    def __iter__(self):
        # allows ``q, iterations, residual = solve_q(...)``
        return iter((self.q, self.iterations, self.residual))


def _iterate(mdp, eps, max_iters, select, snapshots) -> SolveResult:
    if not 0.0 <= mdp.discount < 1.0:
        raise ValueError("value iteration needs a discount in [0, 1)")
    wanted = set(snapshots or ())
    threshold = stopping_threshold(eps, mdp.discount)
    q = np.zeros(mdp.rewards.shape)
    diffs: List[float] = []
    taken: Dict[int, np.ndarray] = {}
    n = 0
    converged = False
    while n < max_iters:
        nxt = _backup_values(mdp, select(q))
        n += 1
        diffs.append(float(np.max(np.abs(nxt - q))))
        q = nxt
        if n in wanted:
            taken[n] = q
        if diffs[-1] <= threshold:
            converged = True
            break
    residual = diffs[-1] if diffs else np.inf
    return SolveResult(QTable(q), n, residual, converged, diffs, taken)


def solve_q(mdp: SampledMdp, eps: float = 1e-8, max_iters: int = 10_000, snapshots: Optional[Iterable[int]] = None) -> SolveResult:
    """Q-value iteration from ``Q0 = 0`` until the contraction bound certifies ``eps``.

    Stops when ``||Q_{n+1} - Q_n|| <= eps (1 - beta) / (2 beta)``.  The
    returned ``residual`` is that last gap, which bounds the Bellman residual
    of the returned table.  ``converged`` is False when ``max_iters`` ran out.
    Iterates whose index is in ``snapshots`` are kept in ``result.snapshots``.
    """
    return _iterate(mdp, eps, max_iters, lambda q: q.max(axis=1), snapshots)


def solve_policy_q(mdp: SampledMdp, pi: Policy, eps: float = 1e-8, max_iters: int = 10_000, snapshots=None) -> SolveResult:
    idx = np.arange(mdp.num_states)
    return _iterate(mdp, eps, max_iters, lambda q: q[idx, pi.action], snapshots)


def finite_horizon(mdp: SampledMdp, horizon: int) -> List[QTable]:
    """``[Q1, ..., QH]`` with ``Q0 = 0``."""
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    out = []
    q = np.zeros(mdp.rewards.shape)
    for _ in range(horizon):
        q = _backup_values(mdp, q.max(axis=1))
        out.append(QTable(q))
    return out
