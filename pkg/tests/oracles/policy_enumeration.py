"""Exhaustive oracle for optimal Q-values of tiny MDPs.

Enumerates every deterministic stationary policy, evaluates it exactly by
Gaussian elimination on ``(I - beta P_pi) V = r_pi``, and takes the
elementwise maximum of the resulting Q tables.
"""
import itertools

import numpy as np


def solve_linear(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gaussian elimination with partial pivoting."""
    a = a.astype(float).copy()
    b = b.astype(float).copy()
    n = len(b)
    for col in range(n):
        piv = col + int(np.argmax(np.abs(a[col:, col])))
        a[[col, piv]] = a[[piv, col]]
        b[[col, piv]] = b[[piv, col]]
        for row in range(col + 1, n):
            f = a[row, col] / a[col, col]
            a[row, col:] -= f * a[col, col:]
            b[row] -= f * b[col]
    x = np.zeros(n)
    for row in range(n - 1, -1, -1):
        x[row] = (b[row] - a[row, row + 1 :] @ x[row + 1 :]) / a[row, row]
    return x


def policy_q(transitions, rewards, discount, policy) -> np.ndarray:
    n = rewards.shape[0]
    idx = np.arange(n)
    p_pi = transitions[idx, policy]
    v = solve_linear(np.eye(n) - discount * p_pi, rewards[idx, policy])
    return rewards + discount * transitions @ v


def optimal_q(transitions, rewards, discount) -> np.ndarray:
    n, k = rewards.shape
    best = None
    for policy in itertools.product(range(k), repeat=n):
        q = policy_q(transitions, rewards, discount, np.array(policy))
        best = q if best is None else np.maximum(best, q)
    return best
