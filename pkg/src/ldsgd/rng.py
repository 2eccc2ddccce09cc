"""Counter-based random streams keyed by (seed, node, step).

Every draw is a pure function of its coordinates, so per-node gradient
evaluation can run in any order, in any chunking, on any number of threads
and still produce bit-identical numbers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _kernels

NORMAL_STREAM = 0
UNIFORM_STREAM = 1

_TWO_PI = 2.0 * np.pi
_INV_2_53 = 1.0 / 9007199254740992.0


def _uniform53(hi: np.ndarray, lo: np.ndarray) -> np.ndarray:
    """Combine two uint32 words into a double in [0, 1) with 53 random bits."""
    a = (hi >> np.uint32(5)).astype(np.float64)
    b = (lo >> np.uint32(6)).astype(np.float64)
    return (a * 67108864.0 + b) * _INV_2_53


@dataclass(frozen=True)
class NoiseStream:
    """Philox4x32-10 keyed by ``seed``; counter = (block, node, step, stream)."""

    seed: int

    @property
    def key(self) -> np.ndarray:
        s = int(self.seed) & 0xFFFFFFFFFFFFFFFF
        return np.array([s & 0xFFFFFFFF, s >> 32], dtype=np.uint64)

    def _blocks(self, steps, n: int, nblocks: int, stream: int) -> np.ndarray:
        steps = np.asarray(steps, dtype=np.int64).reshape(-1)
        if np.any(steps < 0) or np.any(steps > 0xFFFFFFFF):
            raise ValueError("step counters must fit in 32 bits")
        ctr = np.empty((steps.size, n, nblocks, 4), dtype=np.uint32)
        ctr[..., 0] = np.arange(nblocks, dtype=np.uint32)[None, None, :]
        ctr[..., 1] = np.arange(n, dtype=np.uint32)[None, :, None]
        ctr[..., 2] = steps.astype(np.uint32)[:, None, None]
        ctr[..., 3] = stream
        words = _kernels.philox4x32(ctr.reshape(-1, 4), self.key)
        return words.reshape(steps.size, n, nblocks, 4)

    def uniforms(self, steps, n: int, k: int) -> np.ndarray:
        """Array ``(len(steps), n, k)`` of doubles in [0, 1)."""
        nb = (k + 1) // 2
        w = self._blocks(steps, n, nb, UNIFORM_STREAM)
        u = np.empty(w.shape[:3] + (2,))
        u[..., 0] = _uniform53(w[..., 0], w[..., 1])
        u[..., 1] = _uniform53(w[..., 2], w[..., 3])
        return u.reshape(w.shape[0], n, 2 * nb)[..., :k]

    def normals(self, steps, n: int, d: int) -> np.ndarray:
        """Array ``(len(steps), n, d)`` of standard normals (Box-Muller)."""
        nb = (d + 1) // 2
        w = self._blocks(steps, n, nb, NORMAL_STREAM)
        u1 = _uniform53(w[..., 0], w[..., 1])
        u2 = _uniform53(w[..., 2], w[..., 3])
        radius = np.sqrt(-2.0 * np.log1p(-u1))
        theta = _TWO_PI * u2
        z = np.empty(w.shape[:3] + (2,))
        z[..., 0] = radius * np.cos(theta)
        z[..., 1] = radius * np.sin(theta)
        return z.reshape(w.shape[0], n, 2 * nb)[..., :d]
