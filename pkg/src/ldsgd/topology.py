"""Network topologies and their symmetric doubly stochastic mixing matrices."""

from __future__ import annotations

from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .errors import ConstructionFailedError, InvalidMatrixError, InvalidTopologyError

ROW_SUM_TOL = 1e-12
MAX_RESEEDS = 16


def _validate(weights: np.ndarray) -> None:
    if weights.ndim != 2 or weights.shape[0] != weights.shape[1]:
        raise InvalidMatrixError(f"mixing matrix must be square, got shape {weights.shape}")
    if not np.all(np.isfinite(weights)):
        raise InvalidMatrixError("mixing matrix has non-finite entries")
    if not np.array_equal(weights, weights.T):
        raise InvalidMatrixError("mixing matrix is not symmetric")
    if np.any(weights < 0):
        raise InvalidMatrixError("mixing matrix has negative entries")
    dev = np.max(np.abs(weights.sum(axis=1) - 1.0))
    if dev > ROW_SUM_TOL:
        raise InvalidMatrixError(f"row sums deviate from 1 by {dev:.3e}")


def spectral_rho(weights) -> float:
    """Second largest absolute eigenvalue of a symmetric doubly stochastic matrix."""
    w = np.asarray(weights, dtype=np.float64)
    _validate(w)
    if w.shape[0] == 1:
        return 0.0
    mags = np.sort(np.abs(np.linalg.eigvalsh(w)))
    return float(mags[-2])


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    """Validated gossip matrix ``W`` with its cached connectivity ``rho``.

    ``Q = (1/n) 1 1^T`` is not stored; use :attr:`average`.
    """

    weights: np.ndarray
    rho: float = field(default=None)
    kind: str = "custom"

    def __post_init__(self):
        w = np.array(self.weights, dtype=np.float64)
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)
        _validate(w)
        rho = spectral_rho(w) if self.rho is None else float(self.rho)
        if w.shape[0] < 2:
            raise InvalidTopologyError("a mixing matrix needs at least 2 nodes")
        if not rho < 1.0:
            raise InvalidTopologyError(
                f"rho = {rho:.6g} is not below 1; the graph is disconnected or bipartite"
            )
        object.__setattr__(self, "rho", rho)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    @property
    def average(self) -> np.ndarray:
        return np.full((self.n, self.n), 1.0 / self.n)

    @classmethod
    def from_rows(cls, rows) -> "MixingMatrix":
        """Build from an explicit (row-major) matrix supplied by the user."""
        return cls(np.asarray(rows, dtype=np.float64), kind="custom")


def _symmetric_from_offdiag(off: np.ndarray) -> np.ndarray:
    """Mirror the strict upper triangle of ``off`` and fill the diagonal with the slack."""
    upper = np.triu(off, k=1)
    w = upper + upper.T
    np.fill_diagonal(w, 1.0 - w.sum(axis=1))
    return w


def build_complete(n: int) -> MixingMatrix:
    if n < 2:
        raise InvalidTopologyError(f"complete graph needs n >= 2, got {n}")
    return MixingMatrix(np.full((n, n), 1.0 / n), rho=0.0, kind="complete")


def build_ring(n: int, self_weight: float = 0.5) -> MixingMatrix:
    """Lazy ring: ``self_weight`` on the diagonal, the rest split between the two neighbours."""
    if n < 3:
        raise InvalidTopologyError(f"ring needs n >= 3, got {n}")
    if not 0.0 < self_weight < 1.0:
        raise InvalidTopologyError(f"self_weight must lie in (0, 1), got {self_weight}")
    side = (1.0 - self_weight) / 2.0
    off = np.zeros((n, n))
    idx = np.arange(n)
    off[idx, (idx + 1) % n] = side
    off[(idx + 1) % n, idx] = side
    w = _symmetric_from_offdiag(off)
    rho = spectral_rho(w)
    # for a positive self weight the bipartite eigenvalue -1 is damped
    assert rho < 1.0, rho
    return MixingMatrix(w, rho=rho, kind="ring")


def metropolis_weights(adjacency: np.ndarray) -> np.ndarray:
    """Metropolis-Hastings weights ``1/(max(deg_i, deg_j) + 1)`` on the edges."""
    a = np.asarray(adjacency, dtype=bool)
    deg = a.sum(axis=1)
    off = np.where(a, 1.0 / (np.maximum.outer(deg, deg) + 1.0), 0.0)
    np.fill_diagonal(off, 0.0)
    return _symmetric_from_offdiag(off)


def build_random_regular(n: int, degree: int, seed: int = 0) -> MixingMatrix:
    """Random ``degree``-regular graph with Metropolis weights.

    Disconnected samples are rejected and the seed is bumped, at most
    ``MAX_RESEEDS`` times.
    """
    if degree < 1 or degree >= n:
        raise InvalidTopologyError(f"degree must satisfy 1 <= degree < n, got degree={degree}, n={n}")
    if (n * degree) % 2:
        raise InvalidTopologyError(f"n * degree must be even, got n={n}, degree={degree}")
    for attempt in range(MAX_RESEEDS):
        g = nx.random_regular_graph(degree, n, seed=seed + attempt)
        if nx.is_connected(g):
            adj = nx.to_numpy_array(g, nodelist=range(n)) > 0
            return MixingMatrix(metropolis_weights(adj), kind="random_regular")
    raise ConstructionFailedError(
        f"no connected {degree}-regular graph on {n} nodes after {MAX_RESEEDS} seeds"
    )


def with_target_rho(w: MixingMatrix, rho: float) -> MixingMatrix:
    """Reshape ``w`` so that its connectivity becomes ``rho`` (up to eigensolver error).

    For ``rho <= w.rho`` returns ``Q + (rho / w.rho) (W - Q)``, a convex
    combination of ``Q`` and ``W``.  For larger ``rho`` returns the lazy
    matrix ``a I + (1 - a) W`` with ``a`` solved from the spectrum.  Both
    keep the matrix symmetric, doubly stochastic and non-negative.
    """
    if not 0.0 <= rho < 1.0:
        raise InvalidTopologyError(f"target rho {rho} must lie in [0, 1)")
    q = 1.0 / w.n
    if rho <= w.rho:
        scale = rho / w.rho if w.rho > 0 else 0.0
        off = q + scale * (w.weights - q)
    else:
        lam = np.linalg.eigvalsh(w.weights)
        a = _lazy_weight(lam[-2], lam[0], rho)
        off = a * np.eye(w.n) + (1.0 - a) * w.weights
    return MixingMatrix(_symmetric_from_offdiag(off), kind=f"{w.kind}@rho")


def _lazy_weight(lam2: float, lam_min: float, rho: float) -> float:
    """Smallest ``a`` in [0, 1) with ``max(a+(1-a)lam2, |a+(1-a)lam_min|) = rho``.

    The spectrum of ``a I + (1-a) W`` is ``a + (1-a) lam``; only the
    second-largest and smallest eigenvalues can set ``rho``.
    """
    # candidates where each branch alone hits rho; take the larger a that fixes both
    top = (rho - lam2) / (1.0 - lam2)
    lo_plus = (rho - lam_min) / (1.0 - lam_min)
    lo_minus = (-rho - lam_min) / (1.0 - lam_min)
    cands = [a for a in (top, lo_plus, lo_minus) if 0.0 <= a < 1.0]
    for a in sorted(cands):
        r = max(a + (1 - a) * lam2, abs(a + (1 - a) * lam_min))
        if abs(r - rho) <= 1e-12:
            return a
    raise InvalidTopologyError(f"cannot reach rho={rho} by lazy mixing")


def ring_self_weight_for_rho(n: int, rho: float) -> float:
    """Self weight of the lazy ring on ``n`` nodes whose slowest mode equals ``rho``.

    Only valid when that mode is the ``k=1`` Fourier mode, which holds for
    ``rho`` close enough to 1; the caller should check ``build_ring(...).rho``.
    """
    c = np.cos(2.0 * np.pi / n)
    side = (1.0 - rho) / (2.0 * (1.0 - c))
    return 1.0 - 2.0 * side


def from_spec(spec: dict) -> MixingMatrix:
    """Build a topology from its config table."""
    kind = spec.get("kind")
    if kind == "complete":
        return build_complete(int(spec["n"]))
    if kind == "ring":
        return build_ring(int(spec["n"]), float(spec.get("self_weight", 0.5)))
    if kind == "random_regular":
        return build_random_regular(int(spec["n"]), int(spec["degree"]), int(spec.get("seed", 0)))
    if kind == "custom":
        return MixingMatrix.from_rows(spec["weights"])
    raise InvalidTopologyError(f"unknown topology kind {kind!r}")
