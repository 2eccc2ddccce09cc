"""Communication sets and the exact statistics that drive the convergence bounds.

A scheme is the set of steps ``t`` in ``[1..T]`` at which nodes gossip with
``W``; every other step is a purely local SGD update.  For a step window the
accumulated mixing contracts the disagreement by ``rho`` to the power of the
number of gossip steps inside the window, which is what
:func:`rho_exponent` counts.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np

from . import _kernels
from .errors import HorizonTooShortError, InvalidArgumentError, InvalidSchemeError, SizeLimitError

Variant = Literal["after", "before"]

MAX_T_AB = 100_000
MAX_T_C = 20_000


@dataclass(frozen=True)
class CommScheme:
    horizon: int
    members: tuple[int, ...]
    label: str = "explicit"

    def __post_init__(self):
        if self.horizon < 1:
            raise InvalidSchemeError(f"horizon must be positive, got {self.horizon}")
        m = tuple(int(t) for t in self.members)
        if any(b <= a for a, b in zip(m, m[1:])):
            raise InvalidSchemeError("members must be strictly increasing")
        if m and (m[0] < 1 or m[-1] > self.horizon):
            raise InvalidSchemeError(f"members must lie in [1..{self.horizon}]")
        object.__setattr__(self, "members", m)

    def __len__(self) -> int:
        return len(self.members)

    def __contains__(self, t: int) -> bool:
        i = bisect_left(self.members, t)
        return i < len(self.members) and self.members[i] == t

    def mask(self) -> np.ndarray:
        """Boolean array of length ``T``; entry ``t-1`` is True iff ``t`` communicates."""
        out = np.zeros(self.horizon, dtype=bool)
        if self.members:
            out[np.asarray(self.members) - 1] = True
        return out

    def count_through(self, t: int) -> int:
        """``|I_T ∩ [1..t]|``."""
        return bisect_left(self.members, t + 1)

    def rates(self, rho: float) -> np.ndarray:
        """Per-step contraction ``rho_t``: ``rho`` at gossip steps, 1 elsewhere."""
        return np.where(self.mask(), float(rho), 1.0)


def explicit(members: Sequence[int], horizon: int) -> CommScheme:
    """Validate a user-given member list; duplicates are an error, order is not."""
    m = [int(t) for t in members]
    if len(set(m)) != len(m):
        raise InvalidSchemeError("explicit member list has duplicates")
    return CommScheme(horizon, tuple(sorted(m)), "explicit")


def scheme_i0(interval: int, horizon: int) -> CommScheme:
    """Periodic gossip every ``interval`` steps."""
    if not 1 <= interval <= horizon:
        raise InvalidSchemeError(f"need 1 <= I <= T, got I={interval}, T={horizon}")
    return CommScheme(horizon, tuple(range(interval, horizon + 1, interval)), f"i0({interval})")


def _i1_mask(i1: int, i2: int, horizon: int) -> np.ndarray:
    t = np.arange(1, horizon + 1)
    r = t % (i1 + i2)
    return ~((r >= 1) & (r <= i1))


def scheme_i1(i1: int, i2: int, horizon: int) -> CommScheme:
    """``i1`` local steps followed by ``i2`` gossip steps, repeated."""
    if i2 < 1:
        raise InvalidSchemeError(f"I2 must be >= 1, got {i2}")
    if i1 < 0:
        raise InvalidSchemeError(f"I1 must be >= 0, got {i1}")
    if horizon < 1:
        raise InvalidSchemeError(f"horizon must be positive, got {horizon}")
    members = np.flatnonzero(_i1_mask(i1, i2, horizon)) + 1
    return CommScheme(horizon, tuple(members.tolist()), f"i1({i1},{i2})")


def decay_levels(i1: int) -> int:
    """Number of halvings ``ceil(log2 I1)``; zero when ``I1 <= 1``."""
    return math.ceil(math.log2(i1)) if i1 > 1 else 0


def decay_blocks(i1: int, i2: int, m: int) -> list[tuple[int, ...]]:
    """The blocks ``J_0..J_J`` of the decaying scheme, already shifted.

    Block ``j`` is the ``i1``-style pattern with ``floor(I1 / 2^j)`` local
    steps over ``m`` periods, offset by the last member of block ``j-1``.
    """
    if i1 < 0 or i2 < 1 or m < 1:
        raise InvalidSchemeError(f"need I1 >= 0, I2 >= 1, M >= 1; got {i1}, {i2}, {m}")
    blocks = []
    offset = 0
    for j in range(decay_levels(i1) + 1):
        local = i1 >> j
        period = local + i2
        block = np.flatnonzero(_i1_mask(local, i2, m * period)) + 1 + offset
        blocks.append(tuple(block.tolist()))
        offset = int(block[-1])
    return blocks


def decay_end(i1: int, i2: int, m: int) -> int:
    """``max(J_J)``: the step after which the decaying scheme is pure D-SGD."""
    return decay_blocks(i1, i2, m)[-1][-1]


def scheme_i2(i1: int, i2: int, m: int, horizon: int) -> CommScheme:
    """Decaying scheme: halve the local phase every ``m`` periods, then gossip every step."""
    blocks = decay_blocks(i1, i2, m)
    end = blocks[-1][-1]
    if horizon < end:
        raise HorizonTooShortError(horizon, end)
    members = set(range(end, horizon + 1))
    for b in blocks:
        members.update(b)
    return CommScheme(horizon, tuple(sorted(members)), f"i2({i1},{i2},{m})")


def from_spec(spec: dict, horizon: int) -> CommScheme:
    kind = spec.get("kind")
    if kind == "i0":
        return scheme_i0(int(spec["interval"]), horizon)
    if kind == "i1":
        return scheme_i1(int(spec["i1"]), int(spec["i2"]), horizon)
    if kind == "i2":
        return scheme_i2(int(spec["i1"]), int(spec["i2"]), int(spec["m"]), horizon)
    if kind == "explicit":
        return explicit(spec["members"], horizon)
    raise InvalidSchemeError(f"unknown scheme kind {kind!r}")


def gap(scheme: CommScheme) -> int:
    """Longest run between consecutive gossip steps, with sentinels 0 and ``T``."""
    e = (0,) + scheme.members + (scheme.horizon,)
    return max(b - a for a, b in zip(e, e[1:]))


def rho_exponent(s: int, t: int, scheme: CommScheme) -> int:
    """``|[s..t-1] ∩ I_T|``; zero for an empty window (``s >= t``)."""
    if s < 1 or t < 1 or t > scheme.horizon + 1 or s > scheme.horizon + 1:
        raise InvalidArgumentError(f"steps out of range: s={s}, t={t}, T={scheme.horizon}")
    if s >= t:
        return 0
    return scheme.count_through(t - 1) - scheme.count_through(s - 1)


@dataclass(frozen=True)
class SchemeStats:
    a_t: float
    b_t: float
    c_t: float | None
    gap: int
    variant: Variant = "after"

    def scaled(self, factor: float) -> "SchemeStats":
        c = None if self.c_t is None else self.c_t * factor
        return SchemeStats(self.a_t * factor, self.b_t * factor, c, self.gap, self.variant)


def _check_variant(variant: str) -> None:
    if variant not in ("after", "before"):
        raise InvalidArgumentError(f"variant must be 'after' or 'before', got {variant!r}")


def _check_rho(rho: float) -> None:
    if not 0.0 <= rho < 1.0:
        raise InvalidArgumentError(f"rho must lie in [0, 1), got {rho}")


def exact_stats(
    scheme: CommScheme,
    rho: float,
    variant: Variant = "after",
    *,
    with_c: bool = True,
    verify: bool = False,
) -> SchemeStats:
    """Exact ``A_T``, ``B_T``, ``C_T`` (hatted when ``variant='before'``).

    ``A_T`` and ``B_T`` come from O(T) recurrences; ``C_T`` is the O(T^2)
    double sum.  ``verify=True`` also evaluates the definitional sums and
    raises ``AssertionError`` on a relative mismatch above 1e-12.
    """
    _check_rho(rho)
    _check_variant(variant)
    T = scheme.horizon
    if T > MAX_T_AB:
        raise SizeLimitError(f"T={T} exceeds {MAX_T_AB} for exact A_T/B_T; use the closed-form bounds")
    if with_c and T > MAX_T_C:
        raise SizeLimitError(
            f"T={T} exceeds {MAX_T_C} for exact C_T; pass with_c=False or use the closed-form bounds"
        )
    shifted = variant == "before"
    r = scheme.rates(rho)
    sums = _kernels.window_sums(r, shifted)
    sq = _kernels.window_sums(r * r, shifted)
    a_t = float(sq.sum()) / T
    b_t = float(np.dot(sums, sums)) / T
    c_t = _kernels.c_stat(r, sums, shifted) if with_c else None
    out = SchemeStats(a_t, b_t, c_t, gap(scheme), variant)
    if verify:
        ref = definitional_stats(scheme, rho, variant)
        for name in ("a_t", "b_t", "c_t"):
            got, want = getattr(out, name), getattr(ref, name)
            if got is None:
                continue
            if abs(got - want) > 1e-12 * max(abs(got), abs(want)):
                raise AssertionError(f"{name}: recurrence {got!r} != definition {want!r}")
    return out


def rho_matrix(scheme: CommScheme, rho: float, variant: Variant = "after") -> np.ndarray:
    """Dense ``R[s-1, t-1] = rho_{s,t-1}`` (or ``rho_{s+1,t-1}``), zeroed for ``s >= t``.

    Built by counting window members directly, independent of the
    recurrences in :func:`exact_stats`.
    """
    T = scheme.horizon
    counts = np.concatenate([[0], np.cumsum(scheme.mask())])  # counts[k] = |I ∩ [1..k]|
    s = np.arange(1, T + 1)[:, None]
    t = np.arange(1, T + 1)[None, :]
    lo = s + 1 if variant == "before" else s
    expo = counts[np.maximum(t - 1, 0)] - counts[np.minimum(lo - 1, T)]
    expo = np.maximum(expo, 0)
    r = np.power(float(rho), expo.astype(np.float64))
    return np.where(s < t, r, 0.0)


def definitional_stats(scheme: CommScheme, rho: float, variant: Variant = "after") -> SchemeStats:
    """Brute-force evaluation of the defining sums; a test oracle, O(T^2) memory."""
    _check_rho(rho)
    _check_variant(variant)
    T = scheme.horizon
    R = rho_matrix(scheme, rho, variant)
    col = R.sum(axis=0)  # col[t-1] = sum_s rho_{s,t-1}
    a_t = float((R * R).sum()) / T
    b_t = float((col * col).sum()) / T
    if T >= 2:
        c_t = float((R[: T - 1] * col[None, :]).sum(axis=1).max())
    else:
        c_t = 0.0
    return SchemeStats(a_t, b_t, c_t, gap(scheme), variant)
