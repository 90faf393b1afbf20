"""Bit-reproducible random streams: splitmix64 seeding and xoshiro256** generation.

The recurrences are written out here so results do not depend on any
platform generator.

splitmix64 (state ``x``)::

    x   = x + 0x9E3779B97F4A7C15
    z   = x
    z   = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9
    z   = (z ^ (z >> 27)) * 0x94D049BB133111EB
    out = z ^ (z >> 31)

xoshiro256** (state ``s[0..3]``, all arithmetic mod 2**64)::

    out  = rotl(s[1] * 5, 7) * 9
    t    = s[1] << 17
    s[2] ^= s[0]; s[3] ^= s[1]; s[1] ^= s[2]; s[0] ^= s[3]
    s[2] ^= t
    s[3] = rotl(s[3], 45)

The four state words are the first four splitmix64 outputs of the seed.
Uniform doubles are ``((out >> 11) + 0.5) * 2**-53``, strictly inside (0, 1).
Normals use the Marsaglia polar method, caching the second variate.

Replicate seeds are ``mix(mix(master) + (index + 1) * 0x9E3779B97F4A7C15)``
where ``mix`` is the splitmix64 output function above.  ``mix`` is a
bijection of 64-bit words and the golden-ratio increment is odd, so for a
fixed master seed distinct indices never collide, and vice versa.
"""
from __future__ import annotations

import numpy as np
from numba import njit

__all__ = ["MASK64", "splitmix64_mix", "splitmix64_sequence", "derive_replicate_seed", "Xoshiro256"]

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_MUL1 = 0xBF58476D1CE4E5B9
_MUL2 = 0x94D049BB133111EB


def splitmix64_mix(z: int) -> int:
    z &= MASK64
    z = ((z ^ (z >> 30)) * _MUL1) & MASK64
    z = ((z ^ (z >> 27)) * _MUL2) & MASK64
    return z ^ (z >> 31)


def splitmix64_sequence(seed: int, count: int) -> list:
    x = seed & MASK64
    out = []
    for _ in range(count):
        x = (x + GOLDEN) & MASK64
        out.append(splitmix64_mix(x))
    return out


def derive_replicate_seed(master: int, index: int) -> int:
    """Seed for replicate ``index`` of a run seeded with ``master``."""
    if index < 0:
        raise ValueError("replicate index must be nonnegative")
    return splitmix64_mix((splitmix64_mix(master & MASK64) + (index + 1) * GOLDEN) & MASK64)


# ---------------------------------------------------------------------------
# Compiled kernels.  State layout: uint64[4]; normal cache in float64[2]
# as (has_spare, spare).
# ---------------------------------------------------------------------------

_U64 = np.uint64


@njit(cache=True, inline="always")
def _rotl(x, k):
    return (x << _U64(k)) | (x >> _U64(64 - k))


@njit(cache=True)
def next_u64(s):
    s0, s1, s2, s3 = s[0], s[1], s[2], s[3]
    result = _rotl(s1 * _U64(5), 7) * _U64(9)
    t = s1 << _U64(17)
    s2 ^= s0
    s3 ^= s1
    s1 ^= s2
    s0 ^= s3
    s2 ^= t
    s3 = _rotl(s3, 45)
    s[0], s[1], s[2], s[3] = s0, s1, s2, s3
    return result


@njit(cache=True)
def next_double(s):
    return (float(next_u64(s) >> _U64(11)) + 0.5) * (1.0 / 9007199254740992.0)


@njit(cache=True)
def next_normal(s, cache):
    if cache[0] != 0.0:
        cache[0] = 0.0
        return cache[1]
    while True:
        u = 2.0 * next_double(s) - 1.0
        v = 2.0 * next_double(s) - 1.0
        q = u * u + v * v
        if 0.0 < q < 1.0:
            break
    f = np.sqrt(-2.0 * np.log(q) / q)
    cache[0] = 1.0
    cache[1] = v * f
    return u * f


@njit(cache=True)
def log_gamma_variate(s, cache, shape):
    """log of a Gamma(shape, 1) draw (Marsaglia-Tsang; boosted for shape < 1).

    Working in log space keeps the ``U**(1/shape)`` boost from underflowing
    when ``shape`` is tiny.
    """
    boost = 0.0
    a = shape
    if a < 1.0:
        boost = np.log(next_double(s)) / a
        a = a + 1.0
    d = a - 1.0 / 3.0
    c = 1.0 / np.sqrt(9.0 * d)
    while True:
        x = next_normal(s, cache)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = next_double(s)
        x2 = x * x
        if u < 1.0 - 0.0331 * x2 * x2:
            break
        if np.log(u) < 0.5 * x2 + d * (1.0 - v + np.log(v)):
            break
    return np.log(d * v) + boost


@njit(cache=True)
def dirichlet_row_into(s, cache, alpha_row, out):
    n = alpha_row.shape[0]
    if n == 1:
        out[0] = 1.0
        return
    top = -np.inf
    for i in range(n):
        lg = log_gamma_variate(s, cache, alpha_row[i])
        out[i] = lg
        if lg > top:
            top = lg
    total = 0.0
    for i in range(n):
        e = np.exp(out[i] - top)
        out[i] = e
        total += e
    for i in range(n):
        out[i] /= total


@njit(cache=True)
def sample_mdp_into(s, cache, alpha, reward_mean, reward_sd, p_out, r_out):
    ns, na = reward_mean.shape
    for i in range(ns):
        for a in range(na):
            dirichlet_row_into(s, cache, alpha[i, a], p_out[i, a])
    for i in range(ns):
        for a in range(na):
            z = next_normal(s, cache)
            r_out[i, a] = reward_mean[i, a] + reward_sd[i, a] * z if reward_sd[i, a] > 0.0 else reward_mean[i, a]


@njit(cache=True)
def fill_normals(s, cache, out):
    for i in range(out.shape[0]):
        out[i] = next_normal(s, cache)


class Xoshiro256:
    """xoshiro256** stream seeded through splitmix64 (see module docs)."""

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self.state = np.array(splitmix64_sequence(self.seed, 4), dtype=np.uint64)
        self.cache = np.zeros(2)

    def next_u64(self) -> int:
        return int(next_u64(self.state))

    def random(self) -> float:
        return float(next_double(self.state))

    def normal(self, size: int) -> np.ndarray:
        out = np.empty(int(size))
        fill_normals(self.state, self.cache, out)
        return out
