"""Numerical primitives: normal CDF, bisection, Simpson quadrature, Welford moments."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import special

from .errors import BracketError, QuadratureError

__all__ = [
    "std_normal_cdf",
    "std_normal_ppf",
    "bisect_root",
    "integrate",
    "simpson_doubling",
    "MomentAccumulator",
    "welford_push",
    "welford_merge",
]

MAX_DOUBLINGS = 22


def std_normal_cdf(x):
    """Standard normal CDF, accurate to ~1e-16 absolute over the real line.

    Scalars in, float out; arrays in, arrays out.
    """
    out = special.ndtr(x)
    return float(out) if np.ndim(out) == 0 else out


def std_normal_ppf(p):
    out = special.ndtri(p)
    return float(out) if np.ndim(out) == 0 else out


def bisect_root(f: Callable[[float], float], lo: float, hi: float, tol: float = 1e-12, max_iter: int = 400) -> float:
    """Root of ``f`` in ``[lo, hi]`` by bisection.

    Stops once ``|f(x)| <= tol`` or the bracket is narrower than ``tol``.
    """
    if not lo < hi:
        raise BracketError(f"need lo < hi, got [{lo}, {hi}]")
    flo, fhi = f(lo), f(hi)
    if flo == 0.0:
        return lo
    if fhi == 0.0:
        return hi
    if flo * fhi > 0:
        raise BracketError(f"f(lo)={flo!r} and f(hi)={fhi!r} have the same sign")
    mid = 0.5 * (lo + hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        fmid = f(mid)
        if abs(fmid) <= tol or (hi - lo) <= tol or mid in (lo, hi):
            return mid
        if (fmid < 0) == (flo < 0):
            lo, flo = mid, fmid
        else:
            hi = mid
    return mid


def simpson_doubling(g, lo, hi, tol: float, initial_panels: int = 8):
    """Composite Simpson on a batch of intervals, doubling the grid until converged.

    ``g`` maps an array of abscissae with shape ``(k, n)`` to values of shape
    ``(..., k, n)``; leading axes index separate integrands sharing the grid.
    ``lo``/``hi`` have shape ``(k,)``.  Returns the integrals summed over the
    ``k`` intervals, one per leading index.  Convergence requires the summed
    change between successive estimates to be ``<= tol`` for every integrand.
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=float))
    hi = np.atleast_1d(np.asarray(hi, dtype=float))
    width = (hi - lo)[:, None]
    n = int(initial_panels)
    if n % 2:
        n += 1
    t = np.linspace(0.0, 1.0, n + 1)[None, :]
    vals = np.asarray(g(lo[:, None] + width * t), dtype=float)
    ends = vals[..., 0] + vals[..., -1]
    odd = vals[..., 1:-1:2].sum(axis=-1)
    even = vals[..., 2:-1:2].sum(axis=-1)
    h = width[:, 0] / n
    est = (h * (ends + 4.0 * odd + 2.0 * even) / 3.0).sum(axis=-1)
    for _ in range(MAX_DOUBLINGS):
        n *= 2
        h = width[:, 0] / n
        tm = (np.arange(1, n, 2, dtype=float) / n)[None, :]
        new = np.asarray(g(lo[:, None] + width * tm), dtype=float).sum(axis=-1)
        even = even + odd
        odd = new
        nxt = (h * (ends + 4.0 * odd + 2.0 * even) / 3.0).sum(axis=-1)
        if np.all(np.abs(nxt - est) <= tol):
            return nxt
        est = nxt
    raise QuadratureError(f"Simpson quadrature did not reach tol={tol} after {MAX_DOUBLINGS} doublings")


def integrate(g: Callable, lo: float, hi: float, tol: float = 1e-10, vectorized: bool = False) -> float:
    """Integral of ``g`` over ``[lo, hi]`` by composite Simpson with grid doubling.

    Set ``vectorized=True`` when ``g`` accepts numpy arrays elementwise; a
    scalar callable is otherwise wrapped.
    """
    if not lo < hi:
        raise ValueError(f"need lo < hi, got [{lo}, {hi}]")
    if vectorized:
        func = lambda x: np.broadcast_to(np.asarray(g(x), dtype=float), x.shape)
    else:
        vg = np.vectorize(lambda x: float(g(x)), otypes=[float])
        func = vg
    return float(simpson_doubling(func, [lo], [hi], tol, initial_panels=2))


# ---------------------------------------------------------------------------
# Streaming moments
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class MomentAccumulator:
    """Welford running moments; ``mean`` and ``m2`` may be scalars or same-shape arrays."""

    count: int = 0
    mean: object = 0.0
    m2: object = 0.0

    @property
    def variance(self):
        """Sample variance ``m2 / (count - 1)``; zero for fewer than two observations."""
        if self.count < 2:
            return np.zeros_like(self.m2) if np.ndim(self.m2) else 0.0
        return self.m2 / (self.count - 1)

    @property
    def std_error(self):
        return np.sqrt(self.variance / self.count) if self.count else self.variance


def welford_push(acc: MomentAccumulator, x) -> MomentAccumulator:
    count = acc.count + 1
    delta = x - acc.mean
    mean = acc.mean + delta / count
    m2 = acc.m2 + delta * (x - mean)
    return MomentAccumulator(count, mean, m2)


def welford_merge(a: MomentAccumulator, b: MomentAccumulator) -> MomentAccumulator:
    """Combine accumulators over disjoint data (Chan et al. pairwise update)."""
    if b.count == 0:
        return a
    if a.count == 0:
        return b
    count = a.count + b.count
    delta = b.mean - a.mean
    mean = a.mean + delta * (b.count / count)
    m2 = a.m2 + b.m2 + delta * delta * (a.count * b.count / count)
    return MomentAccumulator(count, mean, m2)
