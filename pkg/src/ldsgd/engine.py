"""Matrix-form LD-SGD simulation, traces, and the residual decomposition check.

State is the ``d x n`` matrix ``X`` whose column ``k`` is node ``k``'s
parameters.  One step with stochastic gradients ``G``:

* rule ``after``:  ``X <- (X - eta G) W_t``
* rule ``before``: ``X <- X W_t - eta G``

with ``W_t = W`` at scheme members and the identity elsewhere.
"""

from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Literal, Sequence

import numpy as np

from .errors import DivergenceError, InsufficientDataError, InvalidConfigError, PreconditionError
from .problems import Problem
from .rng import NoiseStream
from .schemes import CommScheme
from .topology import MixingMatrix

Rule = Literal["after", "before"]

CSV_HEADER = ("step", "loss", "grad_norm_sq", "residual", "comms")
DEFAULT_LOG_CAP = 1 << 30
NOISE_CHUNK = 256


@dataclass
class ParamState:
    x: np.ndarray
    step: int = 1

    @property
    def mean(self) -> np.ndarray:
        return self.x.mean(axis=1)


def residual(x: np.ndarray | ParamState) -> float:
    """``(1/n) sum_k ||x_k - x_bar||^2`` for a ``d x n`` state."""
    if isinstance(x, ParamState):
        x = x.x
    x = np.asarray(x, dtype=np.float64)
    dev = x - x.mean(axis=1, keepdims=True)
    return float((dev * dev).sum()) / x.shape[1]


@dataclass
class GradientLog:
    """Per-step ``G(X_s; xi_s)`` and ``X_s``, dropped once the byte cap is hit."""

    cap_bytes: int = DEFAULT_LOG_CAP
    enabled: bool = True
    grads: list = field(default_factory=list)
    states: list = field(default_factory=list)
    used: int = 0

    def record(self, x: np.ndarray, g: np.ndarray) -> None:
        if not self.enabled:
            return
        size = x.nbytes + g.nbytes
        if self.used + size > self.cap_bytes:
            warnings.warn(
                f"gradient log exceeded {self.cap_bytes} bytes; disabling it", RuntimeWarning, stacklevel=3
            )
            self.enabled = False
            self.grads.clear()
            self.states.clear()
            return
        self.grads.append(g.copy())
        self.states.append(x.copy())
        self.used += size


@dataclass
class RunTrace:
    steps: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    grad_norm_sq: list = field(default_factory=list)
    residual: list = field(default_factory=list)
    comms: list = field(default_factory=list)
    mean_grad_norm_sq: float = float("nan")
    total_comms: int = 0
    horizon: int = 0
    seed: int = 0
    rule: str = "after"
    final_x: np.ndarray | None = None
    gradient_log: GradientLog | None = None

    def rows(self) -> Iterable[tuple]:
        return zip(self.steps, self.loss, self.grad_norm_sq, self.residual, self.comms)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(CSV_HEADER)
            for s, f, g, v, c in self.rows():
                w.writerow((s, repr(float(f)), repr(float(g)), repr(float(v)), c))

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "horizon": self.horizon,
            "rule": self.rule,
            "mean_grad_norm_sq": self.mean_grad_norm_sq,
            "final_loss": self.loss[-1] if self.loss else None,
            "final_residual": self.residual[-1] if self.residual else None,
            "total_comms": self.total_comms,
        }


def _check_rule(rule: str) -> None:
    if rule not in ("after", "before"):
        raise InvalidConfigError(f"rule must be 'after' or 'before', got {rule!r}", field="rule")


def run(
    problem: Problem,
    w: MixingMatrix,
    scheme: CommScheme,
    eta: float,
    horizon: int | None = None,
    seed: int = 0,
    rule: Rule = "after",
    eval_every: int = 1,
    log_gradients: bool = False,
    x0: np.ndarray | None = None,
    threads: int = 1,
    log_cap_bytes: int = DEFAULT_LOG_CAP,
) -> RunTrace:
    """Execute exactly ``T`` LD-SGD steps from identical initialisation.

    Metrics describe ``X_t`` before the step-``t`` update and are recorded at
    ``t = 1``, every multiple of ``eval_every`` and ``t = T``; the running
    mean of ``||grad f(x_bar_t)||^2`` covers every step.  Results are
    bit-identical for any ``threads`` value.
    """
    _check_rule(rule)
    T = scheme.horizon if horizon is None else int(horizon)
    if T != scheme.horizon:
        raise InvalidConfigError(f"horizon {T} != scheme horizon {scheme.horizon}", field="horizon")
    if eta < 0 or not math.isfinite(eta):
        raise InvalidConfigError(f"eta must be finite and non-negative, got {eta}", field="eta")
    if eval_every < 1:
        raise InvalidConfigError(f"eval_every must be positive, got {eval_every}", field="eval_every")
    n, d = w.n, problem.dim
    if problem.nodes != n:
        raise InvalidConfigError(f"problem has {problem.nodes} nodes, topology {n}", field="problem.n")
    if x0 is None:
        x0 = problem.default_x0()
    x0 = np.asarray(x0, dtype=np.float64)
    if x0.shape == (d,):
        x = np.repeat(x0[:, None], n, axis=1)
    elif x0.shape == (d, n):
        x = x0.copy()
    else:
        raise InvalidConfigError(f"x0 must have shape ({d},) or ({d}, {n}), got {x0.shape}", field="x0")

    W = w.weights
    mask = scheme.mask()
    stream = NoiseStream(seed)
    trace = RunTrace(horizon=T, seed=seed, rule=rule)
    log = GradientLog(cap_bytes=log_cap_bytes) if log_gradients else None
    trace.gradient_log = log
    g = np.empty((d, n))
    comms = 0
    gsum = 0.0
    pool = ThreadPoolExecutor(max_workers=threads) if threads > 1 else None
    # overflow is caught by the finiteness check below, not by numpy warnings
    errstate = np.errstate(over="ignore", invalid="ignore")
    errstate.__enter__()
    try:
        for start in range(1, T + 1, NOISE_CHUNK):
            steps = np.arange(start, min(start + NOISE_CHUNK, T + 1))
            noise = problem.draws(stream, steps)
            for i, t in enumerate(steps.tolist()):
                xbar = x.mean(axis=1)
                grad = problem.full_gradient(xbar)
                gn = float(grad @ grad)
                gsum += gn
                if mask[t - 1]:
                    comms += 1
                if t == 1 or t % eval_every == 0 or t == T:
                    trace.steps.append(t)
                    trace.loss.append(problem.objective(xbar))
                    trace.grad_norm_sq.append(gn)
                    trace.residual.append(residual(x))
                    trace.comms.append(comms)
                draw = noise[i]
                if pool is None:
                    for k in range(n):
                        g[:, k] = problem.stochastic_node_gradient(k, x[:, k], draw[k])
                else:
                    cols = list(pool.map(lambda k: problem.stochastic_node_gradient(k, x[:, k], draw[k]), range(n)))
                    for k, col in enumerate(cols):
                        g[:, k] = col
                if log is not None:
                    log.record(x, g)
                if rule == "after":
                    x = x - eta * g
                    if mask[t - 1]:
                        x = x @ W
                else:
                    if mask[t - 1]:
                        x = x @ W
                    x = x - eta * g
                if not np.all(np.isfinite(x)):
                    trace.final_x = x
                    trace.total_comms = comms
                    raise DivergenceError(t, trace)
    finally:
        errstate.__exit__(None, None, None)
        if pool is not None:
            pool.shutdown()
    trace.mean_grad_norm_sq = gsum / T
    trace.total_comms = comms
    trace.final_x = x
    return trace


@dataclass(frozen=True)
class DecompositionReport:
    max_abs: float
    max_rel: float
    scale: float
    per_step: dict


def verify_decomposition(
    trace: RunTrace,
    w: MixingMatrix,
    scheme: CommScheme,
    eta: float,
    rule: Rule = "after",
    steps: Sequence[int] | None = None,
) -> DecompositionReport:
    """Rebuild ``X_t (I - Q)`` from logged gradients and compare with the realised state.

    ``after``: ``-eta sum_{s<t} G_s (Phi_{s,t-1} - Q)``; ``before`` uses
    ``Phi_{s+1,t-1}``.  ``Phi`` is accumulated backwards one ``n x n``
    factor at a time.  ``max_rel`` divides by the largest entry of ``X_t`` or
    ``X_t (I - Q)`` over the checked steps, so exact-consensus runs whose
    centred state is pure roundoff do not report a spurious ratio.
    """
    _check_rule(rule)
    log = trace.gradient_log
    if log is None or not log.enabled:
        raise PreconditionError("run was not recorded with an enabled gradient log")
    T = trace.horizon
    states = log.states + [trace.final_x]
    steps = list(range(1, T + 2)) if steps is None else list(steps)
    n = w.n
    Q = np.full((n, n), 1.0 / n)
    centre = np.eye(n) - Q
    mask = scheme.mask()
    per_step, worst, scale = {}, 0.0, 0.0
    for t in steps:
        if not 1 <= t <= T + 1:
            raise PreconditionError(f"step {t} outside [1, {T + 1}]")
        realised = states[t - 1] @ centre
        acc = np.zeros_like(realised)
        phi = np.eye(n)  # Phi_{s+1,t-1}
        for s in range(t - 1, 0, -1):
            w_s = w.weights if mask[s - 1] else None
            if rule == "before":
                acc += log.grads[s - 1] @ (phi - Q)
            if w_s is not None:
                phi = w_s @ phi
            if rule == "after":
                acc += log.grads[s - 1] @ (phi - Q)
        dev = float(np.max(np.abs(realised + eta * acc))) if realised.size else 0.0
        per_step[t] = dev
        worst = max(worst, dev)
        scale = max(scale, float(np.max(np.abs(realised))), float(np.max(np.abs(states[t - 1]))))
    rel = worst / scale if scale > 0 else worst
    return DecompositionReport(worst, rel, scale, per_step)


@dataclass(frozen=True)
class LhsEstimate:
    mean: float
    stderr: float
    per_seed: dict
    diverged: tuple


def estimate_theorem1_lhs(
    problem: Problem,
    w: MixingMatrix,
    scheme: CommScheme,
    eta: float,
    horizon: int,
    seeds: Sequence[int],
    rule: Rule = "after",
    exclude_divergent: bool = False,
    threads: int = 1,
) -> LhsEstimate:
    """Seed average of ``(1/T) sum_t ||grad f(x_bar_t)||^2`` with its standard error."""
    seeds = list(seeds)
    if len(seeds) < 8:
        raise InsufficientDataError(f"need at least 8 seeds, got {len(seeds)}")
    vals, diverged = {}, []
    for s in seeds:
        try:
            tr = run(problem, w, scheme, eta, horizon, seed=s, rule=rule, eval_every=horizon, threads=threads)
            vals[s] = tr.mean_grad_norm_sq
        except DivergenceError as exc:
            diverged.append((s, exc.step))
            if not exclude_divergent:
                raise
    if len(vals) < 2:
        raise InsufficientDataError("fewer than 2 non-divergent seeds")
    arr = np.array(list(vals.values()))
    return LhsEstimate(float(arr.mean()), float(arr.std(ddof=1) / math.sqrt(arr.size)), vals, tuple(diverged))
