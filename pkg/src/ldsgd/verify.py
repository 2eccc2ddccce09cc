"""Theory-verification battery.

Each check returns a :class:`CheckResult`; :func:`run_battery` bundles them
into a JSON-ready report (see ``REPORT_SCHEMA``).  Informational checks are
reported but never affect ``passed``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import networkx as nx
import numpy as np

from . import bounds as B
from . import engine as E
from . import schemes as S
from . import topology as top
from .config import FORMAT_VERSION
from .problems import make_quadratic

DOMINANCE_RTOL = 1e-12
EQUIV_RTOL = 1e-12
DECOMP_RTOL = 1e-9
NEGATIVE_CONTROL_MIN = 1e-3
RHO_PRODUCT_ATOL = 1e-9

REPORT_SCHEMA = {
    "type": "object",
    "required": ["format_version", "passed", "failures", "fault", "checks"],
    "properties": {
        "format_version": {"type": "string"},
        "passed": {"type": "boolean"},
        "failures": {"type": "array", "items": {"type": "string"}},
        "fault": {"type": ["number", "null"]},
        "checks": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["name", "passed", "informational", "cases", "violations", "min_slack", "max_deviation", "detail"],
                "properties": {
                    "name": {"type": "string"},
                    "passed": {"type": "boolean"},
                    "informational": {"type": "boolean"},
                    "cases": {"type": "integer", "minimum": 0},
                    "violations": {"type": "integer", "minimum": 0},
                    "min_slack": {"type": ["number", "null"]},
                    "max_deviation": {"type": ["number", "null"]},
                    "detail": {"type": "array"},
                },
            },
        },
    },
}


@dataclass
class CheckResult:
    name: str
    cases: int = 0
    violations: int = 0
    min_slack: float | None = None
    max_deviation: float | None = None
    informational: bool = False
    detail: list = field(default_factory=list)
    passed: bool = True

    def note_slack(self, slack: float) -> None:
        self.min_slack = slack if self.min_slack is None else min(self.min_slack, slack)

    def note_deviation(self, dev: float) -> None:
        self.max_deviation = dev if self.max_deviation is None else max(self.max_deviation, dev)

    def finish(self) -> "CheckResult":
        self.passed = self.violations == 0
        return self

    def to_dict(self) -> dict:
        return asdict(self)


StatsFn = Callable[..., S.SchemeStats]


def stats_source(fault: float | None = None) -> StatsFn:
    """``exact_stats``, optionally scaled by ``fault`` to emulate a broken implementation."""
    if fault is None:
        return S.exact_stats

    def faulty(*args, **kwargs):
        return S.exact_stats(*args, **kwargs).scaled(fault)

    return faulty


def dominated(exact: float, bound: float) -> bool:
    return exact <= bound + DOMINANCE_RTOL * max(abs(bound), 1.0)


def _dominance(res: CheckResult, label: str, exact: float, bound: float) -> None:
    res.cases += 1
    res.note_slack(bound - exact)
    if not dominated(exact, bound):
        res.violations += 1
        if len(res.detail) < 20:
            res.detail.append({"case": label, "exact": exact, "bound": bound, "slack": bound - exact})


def random_scheme(rng: np.random.Generator, t_max: int) -> S.CommScheme:
    T = int(rng.integers(1, t_max + 1))
    density = rng.choice([0.0, 0.1, 0.3, 0.6, 0.9, 1.0])
    members = np.flatnonzero(rng.uniform(size=T) < density) + 1
    return S.explicit(members.tolist(), T)


def random_mixing(rng: np.random.Generator, n_max: int, rho: float) -> top.MixingMatrix:
    """A random connected topology on ``2..n_max`` nodes reshaped to connectivity ``rho``."""
    n = int(rng.integers(2, n_max + 1))
    if n == 2:
        base = top.build_complete(2)
    else:
        for _ in range(64):
            g = nx.gnp_random_graph(n, float(rng.uniform(0.3, 0.9)), seed=int(rng.integers(2**31)))
            if nx.is_connected(g):
                break
        else:  # pragma: no cover
            g = nx.cycle_graph(n)
        adj = nx.to_numpy_array(g, nodelist=range(n)) > 0
        base = top.MixingMatrix(top.metropolis_weights(adj), kind="gnp")
    return top.with_target_rho(base, rho)


def rho_product_deviation(scheme: S.CommScheme, w: top.MixingMatrix) -> float:
    """Max over windows of ``| ||Phi_{s,t-1} - Q||_2 - rho^{#comms in [s, t-1]} |``."""
    T, n = scheme.horizon, w.n
    Q = np.full((n, n), 1.0 / n)
    mask = scheme.mask()
    worst = 0.0
    for s in range(1, T + 1):
        phi = np.eye(n)
        for t in range(s, T + 2):  # window [s, t-1]; empty when t = s
            if t > s and mask[t - 2]:
                phi = phi @ w.weights
            got = float(np.linalg.norm(phi - Q, ord=2))
            want = w.rho ** S.rho_exponent(s, t, scheme)
            worst = max(worst, abs(got - want))
    return worst


def check_rho_products(pairs: int = 40, seed: int = 0, n_max: int = 8, t_max: int = 32) -> CheckResult:
    rng = np.random.default_rng(seed)
    res = CheckResult("rho_products")
    for i in range(pairs):
        rho = float(rng.choice([0.2, 0.5, 0.9]))
        sc = random_scheme(rng, t_max)
        w = random_mixing(rng, n_max, rho)
        dev = rho_product_deviation(sc, w)
        res.cases += 1
        res.note_deviation(dev)
        if dev > RHO_PRODUCT_ATOL:
            res.violations += 1
            res.detail.append({"case": i, "n": w.n, "T": sc.horizon, "rho": rho, "deviation": dev})
    return res.finish()


def check_stats_equivalence(count: int = 100, seed: int = 1, t_max: int = 256, fault: float | None = None) -> CheckResult:
    rng = np.random.default_rng(seed)
    stats = stats_source(fault)
    res = CheckResult("stats_equivalence")
    for i in range(count):
        sc = random_scheme(rng, t_max)
        rho = float(rng.choice([0.0, 0.1, 0.5, 0.9, 0.99]))
        for variant in ("after", "before"):
            got = stats(sc, rho, variant)
            ref = S.definitional_stats(sc, rho, variant)
            worst = 0.0
            for name in ("a_t", "b_t", "c_t"):
                g, r = getattr(got, name), getattr(ref, name)
                scale = max(abs(g), abs(r))
                worst = max(worst, abs(g - r) / scale if scale > 0 else 0.0)
            res.cases += 1
            res.note_deviation(worst)
            if worst > EQUIV_RTOL:
                res.violations += 1
                if len(res.detail) < 20:
                    res.detail.append({"case": i, "T": sc.horizon, "rho": rho, "variant": variant, "rel_dev": worst})
    return res.finish()


def check_thm2(count: int = 500, seed: int = 2, t_max: int = 200, fault: float | None = None):
    """Gap bounds: the proof-version A bound is pass/fail; the stated one is informational."""
    rng = np.random.default_rng(seed)
    stats = stats_source(fault)
    res = CheckResult("gap_bound_dominance")
    info = CheckResult("gap_bound_stated_a", informational=True)
    for i in range(count):
        sc = random_scheme(rng, t_max)
        rho = float(rng.choice([0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 0.99]))
        st = stats(sc, rho)
        b = B.bound_thm2(S.gap(sc), rho)
        label = f"#{i} T={sc.horizon} gap={st.gap} rho={rho}"
        _dominance(res, label + " A", st.a_t, b.a_bound_weak)
        _dominance(res, label + " B", st.b_t, b.bc_bound)
        _dominance(res, label + " C", st.c_t, b.bc_bound)
        _dominance(info, label + " A", st.a_t, b.a_bound)
    return res.finish(), info.finish()


def _alternating_grid():
    for i1 in range(7):
        for i2 in range(1, 5):
            for rho in (0.1, 0.5, 0.9):
                yield i1, i2, rho, 20 * (i1 + i2)


def check_thm3(fault: float | None = None) -> CheckResult:
    stats = stats_source(fault)
    res = CheckResult("alternating_bound_dominance")
    for i1, i2, rho, T in _alternating_grid():
        st = stats(S.scheme_i1(i1, i2, T), rho)
        b = B.bound_thm3(i1, i2, rho)
        label = f"i1({i1},{i2}) rho={rho} T={T}"
        _dominance(res, label + " A", st.a_t, b.a_bound)
        _dominance(res, label + " B", st.b_t, b.bc_bound)
        _dominance(res, label + " C", st.c_t, b.bc_bound)
    return res.finish()


def check_appendix_d(fault: float | None = None) -> CheckResult:
    stats = stats_source(fault)
    res = CheckResult("before_rule_bound_dominance")
    for i1, i2, rho, T in _alternating_grid():
        st = stats(S.scheme_i1(i1, i2, T), rho, "before")
        b = B.bound_appendix_d(i1, i2, rho)
        label = f"i1({i1},{i2}) rho={rho} T={T}"
        _dominance(res, label + " A^", st.a_t, b.a_bound)
        _dominance(res, label + " B^", st.b_t, b.bc_bound)
        _dominance(res, label + " C^", st.c_t, b.bc_bound)
    return res.finish()


def decay_grid():
    for i1 in (1, 2, 4):
        for i2 in (1, 2):
            for m in (1, 2, 3):
                for rho in (0.3, 0.7):
                    yield i1, i2, m, rho, S.decay_end(i1, i2, m) + 50


def check_thm4(fault: float | None = None):
    """Decay bounds in the stated form (pass/fail) and the lemma form (informational)."""
    stats = stats_source(fault)
    res = CheckResult("decay_bound_dominance")
    info = CheckResult("decay_bound_lemma_form", informational=True)
    for i1, i2, m, rho, T in decay_grid():
        st = stats(S.scheme_i2(i1, i2, m, T), rho)
        b = B.bound_thm4(i1, i2, m, rho, T)
        label = f"i2({i1},{i2},{m}) rho={rho} T={T}"
        _dominance(res, label + " A", st.a_t, b.a_bound)
        _dominance(res, label + " B", st.b_t, b.b_bound)
        _dominance(res, label + " C", st.c_t, b.c_bound)
        _dominance(info, label + " A", st.a_t, b.a_bound_lemma)
        _dominance(info, label + " B", st.b_t, b.b_bound_lemma)
    return res.finish(), info.finish()


def decomposition_cases(horizon: int = 50):
    return [
        S.scheme_i0(3, horizon),
        S.scheme_i1(3, 2, horizon),
        S.scheme_i2(4, 1, 2, horizon),
    ]


def check_decomposition(seed: int = 3, eta: float = 0.1) -> CheckResult:
    """Residual decomposition, both rules and three schemes, plus the wrong-rule control."""
    res = CheckResult("decomposition_identity")
    problem = make_quadratic(4, 6, kappa_target=0.5, sigma=0.3, cond=10.0, seed=seed)
    w = top.build_ring(6)
    for sc in decomposition_cases():
        for rule in ("after", "before"):
            tr = E.run(problem, w, sc, eta, seed=seed, rule=rule, log_gradients=True)
            own = E.verify_decomposition(tr, w, sc, eta, rule).max_rel
            other = "before" if rule == "after" else "after"
            ctrl = E.verify_decomposition(tr, w, sc, eta, other).max_rel
            res.cases += 1
            res.note_deviation(own)
            res.note_slack(ctrl - NEGATIVE_CONTROL_MIN)
            ok = own <= DECOMP_RTOL and ctrl > NEGATIVE_CONTROL_MIN
            res.detail.append({"scheme": sc.label, "rule": rule, "rel_dev": own, "wrong_rule_rel_dev": ctrl})
            if not ok:
                res.violations += 1
    return res.finish()


def check_theorem1(seeds: int = 8, horizon: int = 400, fault: float | None = None) -> CheckResult:
    """Monte Carlo LHS against the main bound at half the step-size ceiling."""
    res = CheckResult("main_bound_monte_carlo")
    problem = make_quadratic(10, 4, kappa_target=0.5, sigma=0.2, cond=10.0, seed=11)
    w = top.build_ring(4)
    sc = S.scheme_i1(2, 2, horizon)
    consts = problem.constants()
    st = stats_source(fault)(sc, w.rho)
    eta = 0.5 * B.lr_ceiling(consts, st.c_t)
    est = E.estimate_theorem1_lhs(problem, w, sc, eta, horizon, list(range(seeds)))
    rhs = B.theorem1_rhs(consts, eta, horizon, st)
    slack = rhs.value + 3 * est.stderr - est.mean
    res.cases = 1
    res.note_slack(slack)
    res.detail.append({"lhs": est.mean, "stderr": est.stderr, "rhs": rhs.value, "in_regime": rhs.in_regime, "eta": eta})
    if slack < 0 or not rhs.in_regime:
        res.violations = 1
    return res.finish()


def run_battery(fault: float | None = None, quick: bool = False) -> dict:
    checks = [
        check_rho_products(pairs=10 if quick else 40),
        check_stats_equivalence(count=30 if quick else 100, fault=fault),
        *check_thm2(count=100 if quick else 500, fault=fault),
        check_thm3(fault=fault),
        check_appendix_d(fault=fault),
        *check_thm4(fault=fault),
        check_decomposition(),
        check_theorem1(fault=fault),
    ]
    failures = [c.name for c in checks if not c.passed and not c.informational]
    return {
        "format_version": FORMAT_VERSION,
        "passed": not failures,
        "failures": failures,
        "fault": fault,
        "checks": [c.to_dict() for c in checks],
    }


def _finite(x):
    """Replace non-finite floats so the report is strict JSON."""
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, dict):
        return {k: _finite(v) for k, v in x.items()}
    if isinstance(x, list):
        return [_finite(v) for v in x]
    return x
