"""Counter-based random variates.

Every variate is a pure function of ``(seed, frame, pixel, draw)``: a
SplitMix64-style finaliser hashes the counter into 64 random bits. Results
therefore do not depend on how pixels are grouped or scheduled.
"""
from __future__ import annotations

import numpy as np
from scipy.special import gammaln

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_C1 = np.uint64(0xBF58476D1CE4E5B9)
_C2 = np.uint64(0x94D049BB133111EB)

# stream identifiers keep different uses of the same counter independent
STREAM_POISSON = 1
STREAM_READ_NOISE = 2
STREAM_TEXTURE = 3
STREAM_GENERIC = 4


def _mix_int(x: int) -> int:
    x &= _M64
    x ^= x >> 30
    x = (x * 0xBF58476D1CE4E5B9) & _M64
    x ^= x >> 27
    x = (x * 0x94D049BB133111EB) & _M64
    x ^= x >> 31
    return x


def _mix(x: np.ndarray) -> np.ndarray:
    x = x ^ (x >> np.uint64(30))
    x = x * _C1
    x = x ^ (x >> np.uint64(27))
    x = x * _C2
    return x ^ (x >> np.uint64(31))


def stream_key(seed: int, frame: int = 0, stream: int = STREAM_GENERIC) -> int:
    k = _mix_int(int(seed) + _GOLDEN)
    k = _mix_int(k ^ ((int(frame) + 2 * _GOLDEN) & _M64))
    return _mix_int(k ^ ((int(stream) + 3 * _GOLDEN) & _M64))


def random_bits(key: int, counters, draw: int = 0) -> np.ndarray:
    c = np.asarray(counters, dtype=np.uint64)
    with np.errstate(over="ignore"):
        h = _mix(c * np.uint64(_GOLDEN) + np.uint64(key))
        return _mix(h ^ np.uint64(_mix_int(draw + 5 * _GOLDEN)))


def uniform(key: int, counters, draw: int = 0) -> np.ndarray:
    """Uniform variates in the open interval (0, 1)."""
    bits = random_bits(key, counters, draw) >> np.uint64(11)
    return (bits.astype(np.float64) + 0.5) * (1.0 / 9007199254740992.0)


def normal(key: int, counters, draw: int = 0) -> np.ndarray:
    """Standard normal variates (Box-Muller, two uniforms per variate)."""
    u1 = uniform(key, counters, 2 * draw)
    u2 = uniform(key, counters, 2 * draw + 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)


def poisson(key: int, counters, lam) -> np.ndarray:
    """Poisson variates with per-counter means ``lam``.

    Inversion for small means, transformed rejection (PTRS) otherwise.
    """
    counters = np.asarray(counters, dtype=np.uint64)
    lam = np.broadcast_to(np.asarray(lam, dtype=float), counters.shape)
    if np.any(lam < 0) or not np.all(np.isfinite(lam)):
        raise ValueError("Poisson means must be finite and non-negative")
    out = np.zeros(counters.shape, dtype=np.int64)
    small = (lam > 0) & (lam < 10)
    if np.any(small):
        out[small] = _poisson_inversion(key, counters[small], lam[small])
    large = lam >= 10
    if np.any(large):
        out[large] = _poisson_ptrs(key, counters[large], lam[large])
    return out


def _poisson_inversion(key, counters, lam):
    u = uniform(key, counters, 0)
    k = np.zeros(lam.shape, dtype=np.int64)
    p = np.exp(-lam)
    cdf = p.copy()
    active = u > cdf
    n = 0
    while np.any(active) and n < 200:
        n += 1
        idx = np.nonzero(active)[0]
        k[idx] += 1
        p[idx] *= lam[idx] / k[idx]
        cdf[idx] += p[idx]
        active[idx] = u[idx] > cdf[idx]
    return k


def _poisson_ptrs(key, counters, lam):
    slam = np.sqrt(lam)
    loglam = np.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2)

    out = np.zeros(lam.shape, dtype=np.int64)
    pending = np.arange(lam.size)
    attempt = 0
    while pending.size:
        c = counters[pending]
        U = uniform(key, c, 2 * attempt) - 0.5
        V = uniform(key, c, 2 * attempt + 1)
        us = 0.5 - np.abs(U)
        aa, bb, ll = a[pending], b[pending], lam[pending]
        k = np.floor((2 * aa / us + bb) * U + ll + 0.43)
        quick = (us >= 0.07) & (V <= vr[pending])
        reject = (k < 0) | ((us < 0.013) & (V > us))
        with np.errstate(divide="ignore", invalid="ignore"):
            lhs = np.log(V) + np.log(invalpha[pending]) - np.log(aa / (us * us) + bb)
            rhs = -ll + k * loglam[pending] - gammaln(k + 1)
        accept = quick | (~reject & (lhs <= rhs))
        out[pending[accept]] = k[accept].astype(np.int64)
        pending = pending[~accept]
        attempt += 1
    return out
