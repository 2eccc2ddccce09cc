"""Synthetic problems with known (or carefully estimated) constants.

A problem exposes exact objective and gradient oracles, per-node gradient
oracles, and a stochastic per-node oracle driven by a pre-drawn noise
record.  Noise records come from :class:`~ldsgd.rng.NoiseStream`, so a
gradient draw is a pure function of (seed, node, step).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .bounds import ProblemConstants
from .errors import InfeasibleProblemError, InvalidArgumentError, InvalidConfigError
from .rng import NoiseStream


class Problem:
    """Interface shared by all testbeds.  Subclasses are immutable."""

    dim: int
    nodes: int

    def objective(self, x: np.ndarray) -> float:
        raise NotImplementedError

    def full_gradient(self, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def node_gradient(self, k: int, x: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def stochastic_node_gradient(self, k: int, x: np.ndarray, draw: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def draws(self, stream: NoiseStream, steps) -> np.ndarray:
        """Noise records for ``steps``; entry ``[i, k]`` feeds node ``k`` at ``steps[i]``."""
        raise NotImplementedError

    def constants(self, x0: np.ndarray | None = None) -> ProblemConstants:
        raise NotImplementedError

    def default_x0(self) -> np.ndarray:
        return np.zeros(self.dim)


@dataclass(frozen=True, eq=False)
class QuadraticProblem(Problem):
    """``f_k(x) = x'Hx/2 - b_k'x`` with shared ``H`` and isotropic Gaussian noise.

    The noise has per-coordinate standard deviation ``sigma / sqrt(d)``, so
    its expected squared norm is exactly ``sigma^2``.
    """

    hessian: np.ndarray
    offsets: np.ndarray  # (n, d)
    sigma: float = 0.0
    kappa_sq: float | None = None
    smoothness: float | None = None

    def __post_init__(self):
        h = np.array(self.hessian, dtype=np.float64)
        b = np.array(self.offsets, dtype=np.float64)
        if h.ndim != 2 or h.shape[0] != h.shape[1]:
            raise InvalidArgumentError(f"Hessian must be square, got {h.shape}")
        if b.ndim != 2 or b.shape[1] != h.shape[0]:
            raise InvalidArgumentError(f"offsets must be (n, {h.shape[0]}), got {b.shape}")
        if not np.array_equal(h, h.T):
            raise InvalidArgumentError("Hessian must be symmetric")
        if self.sigma < 0:
            raise InvalidArgumentError(f"sigma must be non-negative, got {self.sigma}")
        for a in (h, b):
            a.setflags(write=False)
        object.__setattr__(self, "hessian", h)
        object.__setattr__(self, "offsets", b)
        if self.kappa_sq is None:
            dev = b - b.mean(axis=0)
            object.__setattr__(self, "kappa_sq", float((dev**2).sum(axis=1).mean()))
        if self.smoothness is None:
            object.__setattr__(self, "smoothness", float(np.linalg.eigvalsh(h)[-1]))

    @property
    def dim(self) -> int:
        return self.hessian.shape[0]

    @property
    def nodes(self) -> int:
        return self.offsets.shape[0]

    @property
    def mean_offset(self) -> np.ndarray:
        return self.offsets.mean(axis=0)

    def objective(self, x):
        x = np.asarray(x, dtype=np.float64)
        return float(0.5 * x @ self.hessian @ x - self.mean_offset @ x)

    def full_gradient(self, x):
        return self.hessian @ np.asarray(x, dtype=np.float64) - self.mean_offset

    def node_gradient(self, k, x):
        return self.hessian @ np.asarray(x, dtype=np.float64) - self.offsets[k]

    def stochastic_node_gradient(self, k, x, draw):
        return self.node_gradient(k, x) + draw

    def draws(self, stream, steps):
        z = stream.normals(steps, self.nodes, self.dim)
        return z * (self.sigma / math.sqrt(self.dim))

    def minimizer(self) -> np.ndarray:
        return np.linalg.solve(self.hessian, self.mean_offset)

    def min_value(self) -> float:
        return self.objective(self.minimizer())

    def constants(self, x0=None):
        x0 = self.default_x0() if x0 is None else np.asarray(x0, dtype=np.float64)
        delta = max(self.objective(x0) - self.min_value(), 0.0)
        return ProblemConstants(
            smoothness_l=float(self.smoothness),
            grad_variance=float(self.sigma) ** 2,
            noniid_kappa_sq=float(self.kappa_sq),
            init_error=float(delta),
            nodes=self.nodes,
        )


def make_quadratic(
    d: int,
    n: int,
    kappa_target: float = 0.5,
    sigma: float = 0.2,
    cond: float = 10.0,
    seed: int = 0,
) -> QuadraticProblem:
    """Random shared-Hessian quadratic with ``L = 1`` and heterogeneity exactly ``kappa_target^2``.

    Draw order is fixed (basis, spectrum, mean offset, deviations) so that
    ``H`` and ``b_bar`` depend only on ``(d, cond, seed)`` and not on ``n``.
    """
    if d < 1:
        raise InvalidArgumentError(f"d must be >= 1, got {d}")
    if n < 1:
        raise InvalidArgumentError(f"n must be >= 1, got {n}")
    if kappa_target < 0 or sigma < 0:
        raise InvalidArgumentError("kappa_target and sigma must be non-negative")
    if kappa_target > 0 and n < 2:
        raise InfeasibleProblemError("a single node cannot have positive heterogeneity")
    if not cond >= 1.0:
        raise InvalidArgumentError(f"cond must be >= 1, got {cond}")
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((d, d)))
    lam = np.exp(rng.uniform(-math.log(cond), 0.0, size=d))
    lam[0] = 1.0
    h = (basis * lam) @ basis.T
    h = 0.5 * (h + h.T)
    b_bar = rng.standard_normal(d)
    dev = rng.standard_normal((n, d))
    dev -= dev.mean(axis=0)
    scale = math.sqrt(float((dev**2).sum(axis=1).mean()))
    dev = dev * (kappa_target / scale) if kappa_target > 0 else np.zeros_like(dev)
    return QuadraticProblem(
        h, b_bar + dev, float(sigma), kappa_sq=float(kappa_target) ** 2, smoothness=1.0
    )


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass(frozen=True, eq=False)
class LogisticProblem(Problem):
    """L2-regularised binary logistic regression, one data shard per node.

    Labels are in {-1, +1}.  The stochastic oracle picks one sample per
    step uniformly from the node's shard.
    """

    features: tuple  # per-node (m, d) arrays
    labels: tuple  # per-node (m,) arrays
    reg: float = 1e-3
    single_class_nodes: tuple = ()
    _estimates: dict = field(default_factory=dict, repr=False)

    @property
    def dim(self) -> int:
        return self.features[0].shape[1]

    @property
    def nodes(self) -> int:
        return len(self.features)

    def samples(self, k: int) -> int:
        return self.features[k].shape[0]

    def sample_loss(self, k, i, x):
        z = self.labels[k][i] * (self.features[k][i] @ x)
        return float(np.logaddexp(0.0, -z) + 0.5 * self.reg * (x @ x))

    def sample_gradient(self, k, i, x):
        a, y = self.features[k][i], self.labels[k][i]
        return -y * _sigmoid(-y * (a @ x)) * a + self.reg * x

    def node_objective(self, k, x):
        z = self.labels[k] * (self.features[k] @ x)
        return float(np.logaddexp(0.0, -z).mean() + 0.5 * self.reg * (x @ x))

    def node_gradient(self, k, x):
        x = np.asarray(x, dtype=np.float64)
        a, y = self.features[k], self.labels[k]
        w = -y * _sigmoid(-y * (a @ x))
        return a.T @ w / a.shape[0] + self.reg * x

    def objective(self, x):
        x = np.asarray(x, dtype=np.float64)
        return float(np.mean([self.node_objective(k, x) for k in range(self.nodes)]))

    def full_gradient(self, x):
        return np.mean([self.node_gradient(k, x) for k in range(self.nodes)], axis=0)

    def stochastic_node_gradient(self, k, x, draw):
        m = self.samples(k)
        i = min(int(draw[0] * m), m - 1)
        return self.sample_gradient(k, i, np.asarray(x, dtype=np.float64))

    def draws(self, stream, steps):
        return stream.uniforms(steps, self.nodes, 1)

    def smoothness_estimate(self) -> float:
        """``max_k lambda_max(A_k'A_k) / (4 m) + reg``; a true upper bound."""
        return max(
            float(np.linalg.eigvalsh(a.T @ a)[-1]) / (4.0 * a.shape[0]) for a in self.features
        ) + self.reg

    def minimizer(self) -> np.ndarray:
        res = optimize.minimize(
            self.objective, np.zeros(self.dim), jac=self.full_gradient, method="L-BFGS-B",
            options={"gtol": 1e-12, "ftol": 1e-15, "maxiter": 10_000},
        )
        return res.x

    def probe_points(self, count: int = 16, seed: int = 0) -> tuple[np.ndarray, str]:
        xs = self.minimizer()
        radius = 2.0 * (1.0 + float(np.linalg.norm(xs)))
        rng = np.random.default_rng(seed)
        g = rng.standard_normal((count, self.dim))
        g *= (radius * rng.uniform(size=(count, 1)) ** (1.0 / self.dim)) / np.linalg.norm(
            g, axis=1, keepdims=True
        )
        pts = np.vstack([np.zeros(self.dim), xs, g])
        desc = f"origin, minimizer and {count} uniform points in the ball of radius {radius:.4g} at 0"
        return pts, desc

    def constants(self, x0=None):
        x0 = self.default_x0() if x0 is None else np.asarray(x0, dtype=np.float64)
        key = tuple(np.round(x0, 15))
        if key in self._estimates:
            return self._estimates[key]
        pts, desc = self.probe_points()
        sig = kap = 0.0
        for x in pts:
            grads = [self.node_gradient(k, x) for k in range(self.nodes)]
            mean = np.mean(grads, axis=0)
            kap = max(kap, float(np.mean([np.sum((g - mean) ** 2) for g in grads])))
            for k in range(self.nodes):
                a, y = self.features[k], self.labels[k]
                per = (-y * _sigmoid(-y * (a @ x)))[:, None] * a + self.reg * x
                sig = max(sig, float(np.mean(np.sum((per - grads[k]) ** 2, axis=1))))
        delta = max(self.objective(x0) - self.objective(self.minimizer()), 0.0)
        note = f"estimated on {desc}"
        if self.single_class_nodes:
            note += f"; single-class nodes: {list(self.single_class_nodes)}"
        out = ProblemConstants(self.smoothness_estimate(), sig, kap, delta, self.nodes, True, note)
        self._estimates[key] = out
        return out


def make_logistic(
    d: int,
    n: int,
    samples_per_node: int = 50,
    label_skew: float = 0.0,
    seed: int = 0,
    reg: float = 1e-3,
) -> LogisticProblem:
    """Planted-model logistic data split across ``n`` nodes with class skew.

    Node ``k`` prefers class ``+1`` if ``k`` is even and ``-1`` otherwise;
    a ``label_skew`` fraction of its shard is drawn from that class only and
    the rest from the global pool.  The last feature is a constant intercept
    when ``d > 1``.  ``label_skew=1`` gives single-class
    shards, which are allowed and listed in ``single_class_nodes``.
    """
    if samples_per_node < 10:
        raise InvalidArgumentError(f"samples_per_node must be >= 10, got {samples_per_node}")
    if not 0.0 <= label_skew <= 1.0:
        raise InvalidArgumentError(f"label_skew must lie in [0, 1], got {label_skew}")
    if d < 1 or n < 1:
        raise InvalidArgumentError(f"need d >= 1 and n >= 1, got d={d}, n={n}")
    rng = np.random.default_rng(seed)
    w_star = rng.standard_normal(d)
    w_star *= 2.0 / np.linalg.norm(w_star)
    m = samples_per_node
    pool_a = rng.standard_normal((8 * n * m, d)) / math.sqrt(d) * 2.0
    if d > 1:
        # constant intercept feature; without it a -> -a swaps the classes and
        # class-skewed shards would have identically distributed gradients
        pool_a[:, -1] = 1.0
    pool_y = np.where(rng.uniform(size=pool_a.shape[0]) < _sigmoid(pool_a @ w_star), 1.0, -1.0)
    by_class = {c: np.flatnonzero(pool_y == c) for c in (1.0, -1.0)}
    feats, labs, single = [], [], []
    for k in range(n):
        pref = 1.0 if k % 2 == 0 else -1.0
        n_skew = int(round(label_skew * m))
        idx = np.concatenate(
            [
                rng.choice(by_class[pref], size=n_skew, replace=False),
                rng.choice(pool_a.shape[0], size=m - n_skew, replace=False),
            ]
        )
        a, y = pool_a[idx].copy(), pool_y[idx].copy()
        a.setflags(write=False)
        y.setflags(write=False)
        feats.append(a)
        labs.append(y)
        if np.unique(y).size == 1:
            single.append(k)
    return LogisticProblem(tuple(feats), tuple(labs), float(reg), tuple(single))


def exact_constants(problem: Problem, x0: np.ndarray | None = None) -> ProblemConstants:
    """Closed-form constants for quadratics; flagged estimates for other families."""
    return problem.constants(x0)


def from_spec(spec: dict, nodes: int) -> Problem:
    family = spec.get("family")
    if family is None:
        raise InvalidConfigError("problem table is missing 'family'", field="problem.family")
    n = int(spec.get("n", nodes))
    if n != nodes:
        raise InvalidConfigError(f"problem has n={n} but topology has n={nodes}", field="problem.n")
    seed = int(spec.get("seed", 0))
    if family == "quadratic":
        return make_quadratic(
            int(spec.get("d", 10)), n, float(spec.get("kappa", 0.5)), float(spec.get("sigma", 0.2)),
            float(spec.get("cond", 10.0)), seed,
        )
    if family == "logistic":
        return make_logistic(
            int(spec.get("d", 10)), n, int(spec.get("samples_per_node", 50)),
            float(spec.get("label_skew", 0.0)), seed, float(spec.get("reg", 1e-3)),
        )
    raise InvalidConfigError(f"unknown problem family {family!r}", field="problem.family")
