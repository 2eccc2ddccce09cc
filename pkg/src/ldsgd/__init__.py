"""Simulation and verification lab for local decentralized SGD."""

from ._kernels import BACKEND
from .bounds import ProblemConstants
from .engine import RunTrace, residual, run, verify_decomposition
from .schemes import CommScheme, SchemeStats, exact_stats
from .topology import MixingMatrix

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "CommScheme",
    "MixingMatrix",
    "ProblemConstants",
    "RunTrace",
    "SchemeStats",
    "exact_stats",
    "residual",
    "run",
    "verify_decomposition",
]
