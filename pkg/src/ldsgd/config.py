"""TOML run configuration.

A config is one TOML file with top-level run keys and three tables::

    horizon = 200
    eta = "auto"          # or a positive number
    seeds = [0, 1]
    rule = "after"
    eval_every = 10

    [topology]
    kind = "ring"
    n = 8

    [scheme]
    kind = "i1"
    i1 = 4
    i2 = 2

    [problem]
    family = "quadratic"
    d = 20

Optional ``[sweep]`` (``i1_values``, ``i2_values``) and ``[decay]``
(``i1``, ``i2``, ``m``) tables feed the ``sweep`` and ``compare-decay``
commands.
"""

from __future__ import annotations

import copy
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

from .errors import InvalidConfigError

FORMAT_VERSION = "ldsgd-artifact/1"

_TOP_KEYS = {
    "horizon", "eta", "seeds", "rule", "eval_every", "out", "threads",
    "log_gradients", "verify_decomposition", "verify_bounds",
    "topology", "scheme", "problem", "sweep", "decay",
}


@dataclass
class RunConfig:
    topology: dict
    scheme: dict
    problem: dict
    horizon: int
    eta: float | str = "auto"
    seeds: list = field(default_factory=lambda: [0])
    rule: str = "after"
    eval_every: int = 1
    out: str = "ldsgd-out"
    threads: int = 1
    log_gradients: bool = False
    verify_decomposition: bool = False
    verify_bounds: bool = False
    sweep: dict = field(default_factory=dict)
    decay: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return copy.deepcopy(
            {
                "topology": self.topology,
                "scheme": self.scheme,
                "problem": self.problem,
                "horizon": self.horizon,
                "eta": self.eta,
                "seeds": list(self.seeds),
                "rule": self.rule,
                "eval_every": self.eval_every,
                "out": self.out,
                "threads": self.threads,
                "log_gradients": self.log_gradients,
                "verify_decomposition": self.verify_decomposition,
                "verify_bounds": self.verify_bounds,
                "sweep": self.sweep,
                "decay": self.decay,
            }
        )


def _table(raw: dict, name: str) -> dict:
    if name not in raw:
        raise InvalidConfigError(f"missing required table [{name}]", field=name)
    val = raw[name]
    if not isinstance(val, dict):
        raise InvalidConfigError(f"[{name}] must be a table", field=name)
    return dict(val)


def from_dict(raw: dict) -> RunConfig:
    unknown = sorted(set(raw) - _TOP_KEYS)
    if unknown:
        raise InvalidConfigError(f"unknown keys {unknown}", field=unknown[0])
    topo, scheme, problem = (_table(raw, k) for k in ("topology", "scheme", "problem"))
    for tbl, name, key in ((topo, "topology", "kind"), (scheme, "scheme", "kind"), (problem, "problem", "family")):
        if key not in tbl:
            raise InvalidConfigError(f"[{name}] is missing '{key}'", field=f"{name}.{key}")
    if "horizon" not in raw:
        raise InvalidConfigError("missing required key", field="horizon")
    cfg = RunConfig(topology=topo, scheme=scheme, problem=problem, horizon=raw["horizon"])
    for key in ("eta", "seeds", "rule", "eval_every", "out", "threads",
                "log_gradients", "verify_decomposition", "verify_bounds", "sweep", "decay"):
        if key in raw:
            setattr(cfg, key, copy.deepcopy(raw[key]))
    validate(cfg)
    return cfg


def validate(cfg: RunConfig) -> None:
    if not isinstance(cfg.horizon, int) or isinstance(cfg.horizon, bool) or cfg.horizon < 1:
        raise InvalidConfigError(f"must be a positive integer, got {cfg.horizon!r}", field="horizon")
    if isinstance(cfg.eta, str):
        if cfg.eta != "auto":
            raise InvalidConfigError(f"must be a number or 'auto', got {cfg.eta!r}", field="eta")
    elif isinstance(cfg.eta, bool) or not isinstance(cfg.eta, (int, float)) or not (
        math.isfinite(cfg.eta) and cfg.eta >= 0
    ):
        raise InvalidConfigError(f"must be a non-negative number, got {cfg.eta!r}", field="eta")
    if not isinstance(cfg.seeds, list) or not cfg.seeds or not all(
        isinstance(s, int) and not isinstance(s, bool) and s >= 0 for s in cfg.seeds
    ):
        raise InvalidConfigError(f"must be a non-empty list of non-negative integers, got {cfg.seeds!r}", field="seeds")
    if cfg.rule not in ("after", "before"):
        raise InvalidConfigError(f"must be 'after' or 'before', got {cfg.rule!r}", field="rule")
    if not isinstance(cfg.eval_every, int) or cfg.eval_every < 1:
        raise InvalidConfigError(f"must be a positive integer, got {cfg.eval_every!r}", field="eval_every")
    if not isinstance(cfg.threads, int) or cfg.threads < 1:
        raise InvalidConfigError(f"must be a positive integer, got {cfg.threads!r}", field="threads")


def load(path) -> RunConfig:
    """Parse a TOML file; syntax errors are reported with their line and column."""
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise InvalidConfigError(f"cannot read config: {exc}", field=str(p)) from exc
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise InvalidConfigError(f"TOML parse error: {exc}", field=str(p)) from exc
    return from_dict(raw)
