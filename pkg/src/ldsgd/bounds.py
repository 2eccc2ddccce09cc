"""Closed-form convergence bounds and regime conditions.

Everything here is a pure function of scalars (and :class:`SchemeStats`), so
exact statistics and simulated runs can be checked against the theory.
Out-of-regime inputs are evaluated anyway and flagged, never rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .errors import InsufficientDataError, InvalidArgumentError, InvalidConstantsError
from .schemes import CommScheme, SchemeStats, decay_end

SUBLINEAR_MARGIN = 0.1


@dataclass(frozen=True)
class ProblemConstants:
    smoothness_l: float
    grad_variance: float
    noniid_kappa_sq: float
    init_error: float
    nodes: int
    estimated: bool = False
    note: str | None = None

    def __post_init__(self):
        vals = (self.smoothness_l, self.grad_variance, self.noniid_kappa_sq, self.init_error)
        if not all(math.isfinite(v) for v in vals):
            raise InvalidConstantsError("problem constants must be finite")
        if self.smoothness_l <= 0:
            raise InvalidConstantsError(f"L must be positive, got {self.smoothness_l}")
        if min(vals[1:]) < 0:
            raise InvalidConstantsError("sigma^2, kappa^2 and Delta must be non-negative")
        if self.nodes < 1:
            raise InvalidConstantsError(f"need at least one node, got {self.nodes}")


@dataclass(frozen=True)
class RegimeValue:
    """A bound value plus whether its preconditions held."""

    value: float
    in_regime: bool
    threshold: float


def lr_ceiling(consts: ProblemConstants, c_t: float) -> float:
    """``min{1/(2L), 1/(4 sqrt(2) L sqrt(C_T))}``."""
    L = consts.smoothness_l
    if L <= 0:
        raise InvalidConstantsError(f"L must be positive, got {L}")
    if c_t < 0:
        raise InvalidArgumentError(f"C_T must be non-negative, got {c_t}")
    if c_t == 0:
        return 1.0 / (2.0 * L)
    return min(1.0 / (2.0 * L), 1.0 / (4.0 * math.sqrt(2.0) * L * math.sqrt(c_t)))


def theorem1_rhs(consts: ProblemConstants, eta: float, horizon: int, stats: SchemeStats) -> RegimeValue:
    """Right side of the main inequality: sync-SGD terms plus the residual term.

    The regime flag requires ``eta`` below the ceiling (strictly for the
    communication-after rule, non-strictly for communication-before).
    """
    if horizon <= 0:
        raise InvalidArgumentError(f"horizon must be positive, got {horizon}")
    if eta <= 0:
        raise InvalidArgumentError(f"eta must be positive, got {eta}")
    L, s2, k2 = consts.smoothness_l, consts.grad_variance, consts.noniid_kappa_sq
    value = (
        2.0 * consts.init_error / (eta * horizon)
        + eta * L * s2 / consts.nodes
        + 4.0 * eta**2 * L**2 * (stats.a_t * s2 + stats.b_t * k2)
    )
    if stats.c_t is None:
        return RegimeValue(value, False, float("nan"))
    ceiling = lr_ceiling(consts, stats.c_t)
    ok = eta <= ceiling if stats.variant == "before" else eta < ceiling
    return RegimeValue(value, ok, ceiling)


def corollary1_rhs(consts: ProblemConstants, horizon: int, stats: SchemeStats) -> RegimeValue:
    """Bound at ``eta = sqrt(n/T)``; in regime when ``T > 4 L^2 n max{1, 4 C_T}``."""
    L, n, T = consts.smoothness_l, consts.nodes, horizon
    value = (2.0 * consts.init_error + L * consts.grad_variance) / math.sqrt(n * T) + 4.0 * n * L**2 * (
        stats.a_t * consts.grad_variance + stats.b_t * consts.noniid_kappa_sq
    ) / T
    if stats.c_t is None:
        return RegimeValue(value, False, float("nan"))
    threshold = 4.0 * L**2 * n * max(1.0, 4.0 * stats.c_t)
    return RegimeValue(value, T > threshold, threshold)


def _check_rho(rho: float) -> None:
    if not 0.0 <= rho < 1.0:
        raise InvalidArgumentError(f"rho must lie in [0, 1), got {rho}")


@dataclass(frozen=True)
class GapBounds:
    a_bound: float
    bc_bound: float
    a_bound_proof: float

    @property
    def a_bound_weak(self) -> float:
        """The larger of the two A-bounds; the one soundness tests use."""
        return max(self.a_bound, self.a_bound_proof)


def bound_thm2(gap: int, rho: float) -> GapBounds:
    """Gap-only bounds valid for any scheme.

    ``a_bound`` is the stated form ``gap (1+rho^2)/(1-rho^2)``;
    ``a_bound_proof`` is what the derivation yields, ``gap (1+rho)/(1-rho) - 1/2``.
    """
    _check_rho(rho)
    return GapBounds(
        a_bound=gap * (1 + rho * rho) / (1 - rho * rho),
        bc_bound=gap * gap / (1 - rho) ** 2,
        a_bound_proof=gap * (1 + rho) / (1 - rho) - 0.5,
    )


def k_const(i1: int, i2: int, rho: float) -> float:
    """``K = I1/(1 - rho^I2) + rho/(1 - rho)``."""
    return i1 / (1 - rho**i2) + rho / (1 - rho)


def _i1_bracket(i1: int, i2: int, r: float) -> float:
    # (1/2)((1+r^I2)/(1-r^I2) I1^2 + (1+r)/(1-r) I1), with r = rho or rho^2
    return 0.5 * ((1 + r**i2) / (1 - r**i2) * i1 * i1 + (1 + r) / (1 - r) * i1)


@dataclass(frozen=True)
class AlternatingBounds:
    a_bound: float
    k: float

    @property
    def bc_bound(self) -> float:
        return self.k * self.k


def bound_thm3(i1: int, i2: int, rho: float) -> AlternatingBounds:
    """Bounds for the alternating ``(I1 local, I2 gossip)`` scheme."""
    _check_rho(rho)
    if i1 < 0 or i2 < 1:
        raise InvalidArgumentError(f"need I1 >= 0 and I2 >= 1, got {i1}, {i2}")
    period = i1 + i2
    r2 = rho * rho
    a = _i1_bracket(i1, i2, r2) / period + r2 / (1 - r2)
    return AlternatingBounds(a, k_const(i1, i2, rho))


def bound_appendix_d(i1: int, i2: int, rho: float) -> AlternatingBounds:
    """Communication-before counterpart: ``1/(1-rho^2)`` tail and ``K~ = K + 1``."""
    _check_rho(rho)
    if i1 < 0 or i2 < 1:
        raise InvalidArgumentError(f"need I1 >= 0 and I2 >= 1, got {i1}, {i2}")
    r2 = rho * rho
    a = _i1_bracket(i1, i2, r2) / (i1 + i2) + 1 / (1 - r2)
    k_tilde = i1 / (1 - rho**i2) + 1 / (1 - rho)
    return AlternatingBounds(a, k_tilde)


@dataclass(frozen=True)
class DecayBounds:
    a_bound: float
    b_bound: float
    c_bound: float
    decay_end: int
    k: float
    # exponents as derived in the supporting lemma (smaller, reported only)
    a_bound_lemma: float = field(default=float("nan"))
    b_bound_lemma: float = field(default=float("nan"))


def bound_thm4(i1: int, i2: int, m: int, rho: float, horizon: int) -> DecayBounds:
    """Bounds for the decaying scheme, in the stated form."""
    _check_rho(rho)
    end = decay_end(i1, i2, m)
    if horizon < end:
        from .errors import HorizonTooShortError

        raise HorizonTooShortError(horizon, end)
    T = horizon
    K = k_const(i1, i2, rho)
    r2 = rho * rho
    tail = 1 - end / T
    a = i1 / (1 - rho ** (2 * i2)) * rho ** (2 * (T - end)) / T + tail * r2 / (1 - r2)
    b = K * (i1 / (1 - rho**i2) * rho ** (T - end) / T + tail * rho / (1 - rho))
    lemma_shift = T + i2 - end - 1
    a_lemma = i1 / (1 - rho ** (2 * i2)) * rho ** (2 * lemma_shift) / T + tail * r2 / (1 - r2)
    b_lemma = K * (i1 / (1 - rho**i2) * rho**lemma_shift / T + tail * rho / (1 - rho))
    return DecayBounds(a, b, K * K, end, K, a_lemma, b_lemma)


@dataclass(frozen=True)
class SublinearReport:
    horizons: tuple[int, ...]
    slopes: dict
    status: dict
    sublinear: bool
    speedup: bool


def _slope(horizons: np.ndarray, values: np.ndarray) -> tuple[float | None, str]:
    if np.all(values == 0):
        return None, "degenerate-zero"
    if np.any(values <= 0):
        return None, "degenerate-mixed"
    return float(np.polyfit(np.log(horizons), np.log(values), 1)[0]), "ok"


def sublinear_check(stats_by_horizon: Mapping[int, SchemeStats]) -> SublinearReport:
    """Empirical log-log growth rates of ``A_T``, ``B_T``, ``C_T`` across horizons.

    ``sublinear`` holds when every slope is below ``1 - margin``; ``speedup``
    when the A and B slopes are at most ``1/2 + margin`` and C is sublinear.
    An all-zero statistic counts as satisfying both.
    """
    if len(stats_by_horizon) < 3:
        raise InsufficientDataError(f"need at least 3 horizons, got {len(stats_by_horizon)}")
    hs = np.array(sorted(stats_by_horizon), dtype=np.float64)
    slopes, status = {}, {}
    for name in ("a_t", "b_t", "c_t"):
        vals = [getattr(stats_by_horizon[int(h)], name) for h in hs]
        if any(v is None for v in vals):
            continue
        slopes[name], status[name] = _slope(hs, np.array(vals, dtype=np.float64))

    def below(name, limit, strict):
        if name not in status:
            return True
        if status[name] == "degenerate-zero":
            return True
        if status[name] != "ok":
            return False
        return slopes[name] < limit if strict else slopes[name] <= limit

    sub = all(below(k, 1 - SUBLINEAR_MARGIN, True) for k in ("a_t", "b_t", "c_t"))
    speed = (
        below("a_t", 0.5 + SUBLINEAR_MARGIN, False)
        and below("b_t", 0.5 + SUBLINEAR_MARGIN, False)
        and below("c_t", 1 - SUBLINEAR_MARGIN, True)
    )
    return SublinearReport(tuple(int(h) for h in hs), slopes, status, sub, speed)


def comparison_records(scheme: CommScheme, rho: float, stats: SchemeStats, bounds: Mapping[str, float]):
    """JSON-ready rows ``{scheme, rho, stat_name, exact, bound, slack}``."""
    rows = []
    for name, bound in bounds.items():
        stat = name.split(":")[0]
        exact = getattr(stats, stat)
        if exact is None:
            continue
        rows.append(
            {
                "scheme": scheme.label,
                "rho": float(rho),
                "stat_name": name,
                "exact": float(exact),
                "bound": float(bound),
                "slack": float(bound) - float(exact),
            }
        )
    return rows
