"""Hot inner loops.

Each kernel has a pure-numpy implementation (``*_numpy``) and, when numba
is importable, an ``@njit`` twin (``*_numba``).  The public names bind to
the numba versions unless ``LDSGD_DISABLE_NUMBA`` is set to a truthy value
before import.  Both paths do the same arithmetic in the same order except
where a numpy reduction (``dot``) is used in place of a scalar loop.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover - exercised only without numba
    numba = None

_DISABLE = os.environ.get("LDSGD_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}
HAVE_NUMBA = numba is not None
BACKEND = "numba" if HAVE_NUMBA and not _DISABLE else "numpy"

PHILOX_M0 = 0xD2511F53
PHILOX_M1 = 0xCD9E8D57
PHILOX_W0 = 0x9E3779B9
PHILOX_W1 = 0xBB67AE85
PHILOX_ROUNDS = 10
_MASK32 = 0xFFFFFFFF


# --------------------------------------------------------------------------
# window sums  S_t = sum_{s<t} rho_{s,t-1}   (and the shifted variant)


def window_sums_numpy(rates: np.ndarray, shifted: bool) -> np.ndarray:
    """Return ``out`` with ``out[t-1] = sum_{s=1}^{t-1} prod_{l=s}^{t-1} rates[l-1]``.

    With ``shifted`` the product starts at ``s+1`` instead, i.e. the sum of
    ``rho_{s+1,t-1}``.  Recurrences: ``S_{t+1} = r_t (S_t + 1)`` and
    ``S^_{t+1} = r_t S^_t + 1``.
    """
    T = rates.shape[0]
    out = np.zeros(T)
    acc = 0.0
    for t in range(1, T):
        r = float(rates[t - 1])
        acc = r * acc + 1.0 if shifted else r * (acc + 1.0)
        out[t] = acc
    return out


def c_stat_numpy(rates: np.ndarray, sums: np.ndarray, shifted: bool) -> float:
    """``max_s sum_{t=s+1}^T rho_{s,t-1} * sums[t-1]`` by the direct double sum."""
    T = rates.shape[0]
    best = 0.0
    for s in range(1, T):
        if shifted:
            # rho_{s+1,t-1} for t = s+1..T: 1, r_{s+1}, r_{s+1} r_{s+2}, ...
            window = np.empty(T - s)
            window[0] = 1.0
            np.cumprod(rates[s:T - 1], out=window[1:])
        else:
            window = np.cumprod(rates[s - 1:T - 1])
        val = float(np.dot(window, sums[s:T]))
        if val > best:
            best = val
    return best


# --------------------------------------------------------------------------
# Philox4x32-10 counter-based generator


def philox4x32_numpy(counters: np.ndarray, key: np.ndarray) -> np.ndarray:
    """Vectorised Philox4x32-10 over an ``(N, 4)`` uint32 counter array."""
    c = np.asarray(counters, dtype=np.uint64) & _MASK32
    c0, c1, c2, c3 = (c[:, i].copy() for i in range(4))
    k0 = np.uint64(int(key[0]) & _MASK32)
    k1 = np.uint64(int(key[1]) & _MASK32)
    m0, m1 = np.uint64(PHILOX_M0), np.uint64(PHILOX_M1)
    mask, shift = np.uint64(_MASK32), np.uint64(32)
    w0, w1 = np.uint64(PHILOX_W0), np.uint64(PHILOX_W1)
    for _ in range(PHILOX_ROUNDS):
        p0 = c0 * m0
        p1 = c2 * m1
        c0, c1, c2, c3 = (
            (p1 >> shift) ^ c1 ^ k0,
            p1 & mask,
            (p0 >> shift) ^ c3 ^ k1,
            p0 & mask,
        )
        k0 = (k0 + w0) & mask
        k1 = (k1 + w1) & mask
    return np.stack([c0, c1, c2, c3], axis=1).astype(np.uint32)


if HAVE_NUMBA:

    @numba.njit(cache=True)
    def window_sums_numba(rates, shifted):
        T = rates.shape[0]
        out = np.zeros(T)
        acc = 0.0
        for t in range(1, T):
            r = rates[t - 1]
            if shifted:
                acc = r * acc + 1.0
            else:
                acc = r * (acc + 1.0)
            out[t] = acc
        return out

    @numba.njit(cache=True)
    def c_stat_numba(rates, sums, shifted):
        T = rates.shape[0]
        best = 0.0
        for s in range(1, T):
            prod = 1.0
            val = 0.0
            for t in range(s + 1, T + 1):
                if shifted:
                    if t > s + 1:
                        prod *= rates[t - 2]
                else:
                    prod *= rates[t - 2]
                if prod == 0.0:
                    break
                val += prod * sums[t - 1]
            if val > best:
                best = val
        return best

    @numba.njit(cache=True)
    def _philox_block(x0, x1, x2, x3, k0, k1):
        for _ in range(PHILOX_ROUNDS):
            p0 = x0 * np.uint64(PHILOX_M0)
            p1 = x2 * np.uint64(PHILOX_M1)
            y0 = (p1 >> np.uint64(32)) ^ x1 ^ k0
            y1 = p1 & np.uint64(_MASK32)
            y2 = (p0 >> np.uint64(32)) ^ x3 ^ k1
            y3 = p0 & np.uint64(_MASK32)
            x0, x1, x2, x3 = y0, y1, y2, y3
            k0 = (k0 + np.uint64(PHILOX_W0)) & np.uint64(_MASK32)
            k1 = (k1 + np.uint64(PHILOX_W1)) & np.uint64(_MASK32)
        return x0, x1, x2, x3

    @numba.njit(cache=True)
    def _philox4x32_numba(counters, k0, k1):
        N = counters.shape[0]
        out = np.empty((N, 4), dtype=np.uint32)
        for i in range(N):
            a, b, c, d = _philox_block(
                np.uint64(counters[i, 0]),
                np.uint64(counters[i, 1]),
                np.uint64(counters[i, 2]),
                np.uint64(counters[i, 3]),
                k0,
                k1,
            )
            out[i, 0] = a
            out[i, 1] = b
            out[i, 2] = c
            out[i, 3] = d
        return out

    def philox4x32_numba(counters: np.ndarray, key: np.ndarray) -> np.ndarray:
        ctr = np.ascontiguousarray(counters, dtype=np.uint32)
        return _philox4x32_numba(
            ctr, np.uint64(int(key[0]) & _MASK32), np.uint64(int(key[1]) & _MASK32)
        )

else:  # pragma: no cover
    window_sums_numba = c_stat_numba = philox4x32_numba = None


if BACKEND == "numba":

    def window_sums(rates: np.ndarray, shifted: bool) -> np.ndarray:
        return window_sums_numba(np.ascontiguousarray(rates, dtype=np.float64), shifted)

    def c_stat(rates: np.ndarray, sums: np.ndarray, shifted: bool) -> float:
        return float(
            c_stat_numba(
                np.ascontiguousarray(rates, dtype=np.float64),
                np.ascontiguousarray(sums, dtype=np.float64),
                shifted,
            )
        )

    philox4x32 = philox4x32_numba
else:
    window_sums = window_sums_numpy
    c_stat = c_stat_numpy
    philox4x32 = philox4x32_numpy
