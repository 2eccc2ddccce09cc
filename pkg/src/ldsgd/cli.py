"""Command-line runner: ``ldsgd run|sweep|compare-decay|verify|stats``.

Exit codes: 0 ok, 1 a check failed, 2 bad configuration, 3 divergence.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import os
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import bounds as B
from . import engine as E
from . import problems as P
from . import schemes as S
from . import topology as top
from . import verify as V
from ._kernels import BACKEND
from .config import FORMAT_VERSION, RunConfig, load
from .errors import DivergenceError, InvalidConfigError, LDSGDError

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3
OUT_ENV = "LDSGD_OUT"
SWEEP_COLUMNS = ("i1", "i2", "comms", "final_loss", "mean_grad_norm_sq", "final_residual")


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _json_safe(x):
    if isinstance(x, float) and not math.isfinite(x):
        return None
    if isinstance(x, (np.floating,)):
        return _json_safe(float(x))
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, dict):
        return {str(k): _json_safe(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_json_safe(v) for v in x]
    return x


def write_json(path: Path, obj) -> None:
    atomic_write(path, json.dumps(_json_safe(obj), indent=2, sort_keys=True) + "\n")


def _artifact(cfg: RunConfig, command: str, **payload) -> dict:
    return {"format_version": FORMAT_VERSION, "command": command, "backend": BACKEND, "config": cfg.to_dict(), **payload}


class Setup:
    """Objects built from a config: topology, scheme, problem and derived constants."""

    def __init__(self, cfg: RunConfig, scheme_spec: dict | None = None):
        self.cfg = cfg
        self.w = _build("topology", top.from_spec, cfg.topology)
        self.scheme_spec = scheme_spec or cfg.scheme
        self.scheme = _build("scheme", S.from_spec, self.scheme_spec, cfg.horizon)
        self.problem = _build("problem", P.from_spec, cfg.problem, self.w.n)
        self.consts = self.problem.constants()
        T = cfg.horizon
        self.stats = S.exact_stats(
            self.scheme, self.w.rho, cfg.rule, with_c=T <= S.MAX_T_C
        ) if T <= S.MAX_T_AB else None

    def c_for_ceiling(self) -> float:
        """Exact ``C_T`` when available, else a closed-form upper bound (a safer, smaller ceiling)."""
        if self.stats is not None and self.stats.c_t is not None:
            return self.stats.c_t
        kind, rho = self.scheme_spec["kind"], self.w.rho
        if kind == "i1":
            return B.bound_thm3(int(self.scheme_spec["i1"]), int(self.scheme_spec["i2"]), rho).bc_bound
        return B.bound_thm2(S.gap(self.scheme), rho).bc_bound

    def eta(self) -> tuple[float, str]:
        if self.cfg.eta != "auto":
            return float(self.cfg.eta), "config"
        ceiling = B.lr_ceiling(self.consts, self.c_for_ceiling())
        return min(ceiling, math.sqrt(self.w.n / self.cfg.horizon)), "auto"


def _build(section: str, fn, *args):
    try:
        return fn(*args)
    except InvalidConfigError:
        raise
    except KeyError as exc:
        raise InvalidConfigError(f"missing key {exc.args[0]!r}", field=f"{section}.{exc.args[0]}") from exc
    except (LDSGDError, TypeError, ValueError) as exc:
        raise InvalidConfigError(str(exc), field=section) from exc


def _const_dict(c: B.ProblemConstants) -> dict:
    return {
        "L": c.smoothness_l, "sigma_sq": c.grad_variance, "kappa_sq": c.noniid_kappa_sq,
        "delta": c.init_error, "n": c.nodes, "estimated": c.estimated, "note": c.note,
    }


def _stats_dict(st: S.SchemeStats | None) -> dict | None:
    if st is None:
        return None
    return {"A_T": st.a_t, "B_T": st.b_t, "C_T": st.c_t, "gap": st.gap, "variant": st.variant}


def bound_records(scheme_spec: dict, scheme: S.CommScheme, rho: float, st: S.SchemeStats) -> list[dict]:
    """Bound-vs-exact rows for every closed form that applies to this scheme and rule."""
    rows = []
    kind = scheme_spec["kind"]
    if st.variant == "after":
        g = B.bound_thm2(st.gap, rho)
        rows += B.comparison_records(scheme, rho, st, {
            "a_t:gap_proof": g.a_bound_weak, "a_t:gap_stated": g.a_bound,
            "b_t:gap": g.bc_bound, "c_t:gap": g.bc_bound,
        })
        if kind == "i1":
            b = B.bound_thm3(int(scheme_spec["i1"]), int(scheme_spec["i2"]), rho)
            rows += B.comparison_records(scheme, rho, st, {
                "a_t:alternating": b.a_bound, "b_t:alternating": b.bc_bound, "c_t:alternating": b.bc_bound,
            })
        elif kind == "i2":
            b = B.bound_thm4(int(scheme_spec["i1"]), int(scheme_spec["i2"]), int(scheme_spec["m"]), rho, scheme.horizon)
            rows += B.comparison_records(scheme, rho, st, {
                "a_t:decay": b.a_bound, "b_t:decay": b.b_bound, "c_t:decay": b.c_bound,
            })
    elif kind == "i1":
        b = B.bound_appendix_d(int(scheme_spec["i1"]), int(scheme_spec["i2"]), rho)
        rows += B.comparison_records(scheme, rho, st, {
            "a_t:before_alternating": b.a_bound, "b_t:before_alternating": b.bc_bound,
            "c_t:before_alternating": b.bc_bound,
        })
    for r in rows:
        r["informational"] = r["stat_name"] == "a_t:gap_stated"
        r["holds"] = V.dominated(r["exact"], r["bound"])
    return rows


def _run_seeds(setup: Setup, eta: float, trace_dir: Path | None, prefix: str = "seed", log: bool = False):
    cfg = setup.cfg
    traces = []
    for s in cfg.seeds:
        try:
            tr = E.run(
                setup.problem, setup.w, setup.scheme, eta, cfg.horizon, seed=s, rule=cfg.rule,
                eval_every=cfg.eval_every, log_gradients=log, threads=cfg.threads,
            )
        except DivergenceError as exc:
            if trace_dir is not None and exc.trace is not None:
                trace_dir.mkdir(parents=True, exist_ok=True)
                exc.trace.write_csv(trace_dir / f"{prefix}_{s}.csv")
            exc.seed = s
            raise
        if trace_dir is not None:
            trace_dir.mkdir(parents=True, exist_ok=True)
            tr.write_csv(trace_dir / f"{prefix}_{s}.csv")
        traces.append(tr)
    return traces


def _means(traces) -> dict:
    return {
        "final_loss": float(np.mean([t.loss[-1] for t in traces])),
        "mean_grad_norm_sq": float(np.mean([t.mean_grad_norm_sq for t in traces])),
        "final_residual": float(np.mean([t.residual[-1] for t in traces])),
    }


def cmd_run(cfg: RunConfig, out: Path) -> int:
    setup = Setup(cfg)
    eta, source = setup.eta()
    log = cfg.log_gradients or cfg.verify_decomposition
    status = EXIT_OK
    payload = {
        "eta": eta, "eta_source": source, "rho": setup.w.rho, "comms": len(setup.scheme),
        "constants": _const_dict(setup.consts), "stats": _stats_dict(setup.stats),
    }
    if setup.stats is not None and setup.stats.c_t is not None:
        rhs = B.theorem1_rhs(setup.consts, eta, cfg.horizon, setup.stats) if eta > 0 else None
        if rhs is not None:
            payload["main_bound"] = {"value": rhs.value, "in_regime": rhs.in_regime, "eta_ceiling": rhs.threshold}
    try:
        traces = _run_seeds(setup, eta, out / "traces", log=log)
    except DivergenceError as exc:
        payload["diverged"] = {"seed": getattr(exc, "seed", None), "step": exc.step}
        write_json(out / "summary.json", _artifact(cfg, "run", **payload))
        print(f"divergence: seed {payload['diverged']['seed']} at step {exc.step}", file=sys.stderr)
        return EXIT_DIVERGED
    payload["seeds"] = [t.summary() for t in traces]
    payload["mean"] = _means(traces)
    if cfg.verify_decomposition:
        reports = []
        for t in traces:
            r = E.verify_decomposition(t, setup.w, setup.scheme, eta, cfg.rule)
            reports.append({"seed": t.seed, "max_abs": r.max_abs, "max_rel": r.max_rel, "passed": r.max_rel <= V.DECOMP_RTOL})
        payload["decomposition"] = reports
        write_json(out / "decomposition.json", _artifact(cfg, "run", decomposition=reports))
        if not all(r["passed"] for r in reports):
            status = EXIT_CHECK
    if cfg.verify_bounds:
        if setup.stats is None or setup.stats.c_t is None:
            raise InvalidConfigError(f"exact statistics need T <= {S.MAX_T_C}", field="verify_bounds")
        rows = bound_records(setup.scheme_spec, setup.scheme, setup.w.rho, setup.stats)
        payload["bounds"] = rows
        write_json(out / "bounds.json", _artifact(cfg, "run", bounds=rows))
        if not all(r["holds"] or r["informational"] for r in rows):
            status = EXIT_CHECK
    write_json(out / "summary.json", _artifact(cfg, "run", **payload))
    print(f"run: {len(traces)} seed(s), eta={eta!r}, mean_grad_norm_sq={payload['mean']['mean_grad_norm_sq']!r}")
    return status


def _int_list(text: str | None, fallback, name: str) -> list[int]:
    if text is not None:
        try:
            vals = [int(v) for v in text.split(",") if v.strip()]
        except ValueError as exc:
            raise InvalidConfigError(f"expected comma-separated integers, got {text!r}", field=name) from exc
    else:
        vals = list(fallback or [])
    if not vals:
        raise InvalidConfigError("empty value list", field=name)
    return vals


def cmd_sweep(cfg: RunConfig, out: Path, i1_values: list[int], i2_values: list[int]) -> int:
    if cfg.scheme.get("kind") != "i1":
        raise InvalidConfigError("sweep needs an i1 scheme", field="scheme.kind")
    rows = []
    for a in i1_values:
        for b in i2_values:
            spec = {"kind": "i1", "i1": a, "i2": b}
            setup = Setup(cfg, spec)
            eta, source = setup.eta()
            traces = _run_seeds(setup, eta, None)
            m = _means(traces)
            row = {"i1": a, "i2": b, "comms": len(setup.scheme), **m}
            rows.append(row)
            write_json(out / "sweep" / f"cell_i1_{a}_i2_{b}.json", _artifact(
                cfg, "sweep", scheme=spec, eta=eta, eta_source=source, row=row,
                seeds=[t.summary() for t in traces],
            ))
    buf = io.StringIO()
    wr = csv.writer(buf, lineterminator="\n")
    wr.writerow(SWEEP_COLUMNS)
    for r in rows:
        wr.writerow([r["i1"], r["i2"], r["comms"]] + [repr(r[k]) for k in SWEEP_COLUMNS[3:]])
    atomic_write(out / "sweep_summary.csv", buf.getvalue())
    write_json(out / "sweep_summary.json", _artifact(cfg, "sweep", rows=rows))
    print(f"sweep: {len(rows)} cells")
    return EXIT_OK


def cmd_compare_decay(cfg: RunConfig, out: Path, i1: int, i2: int, m: int) -> int:
    fixed_spec = {"kind": "i1", "i1": i1, "i2": i2}
    decay_spec = {"kind": "i2", "i1": i1, "i2": i2, "m": m}
    try:
        S.scheme_i2(i1, i2, m, cfg.horizon)
    except S.HorizonTooShortError as exc:
        raise InvalidConfigError(str(exc), field="horizon") from exc
    fixed = Setup(cfg, fixed_spec)
    decay = Setup(cfg, decay_spec)
    eta, source = fixed.eta()
    result = {"eta": eta, "eta_source": source}
    for name, setup in (("fixed", fixed), ("decay", decay)):
        traces = _run_seeds(setup, eta, out / "compare_decay", prefix=name)
        result[name] = {
            "scheme": setup.scheme_spec,
            "label": setup.scheme.label,
            "comms": len(setup.scheme),
            "seeds": [t.summary() for t in traces],
            "mean": _means(traces),
        }
    result["decay_end"] = S.decay_end(i1, i2, m)
    write_json(out / "compare_decay.json", _artifact(cfg, "compare-decay", **result))
    f, d = result["fixed"], result["decay"]
    print(
        f"compare-decay: comms {f['comms']} vs {d['comms']}, final residual "
        f"{f['mean']['final_residual']!r} vs {d['mean']['final_residual']!r}"
    )
    return EXIT_OK


def cmd_verify(out: Path | None, fault: float | None, quick: bool) -> int:
    report = V.run_battery(fault=fault, quick=quick)
    for c in report["checks"]:
        tag = "info" if c["informational"] else ("PASS" if c["passed"] else "FAIL")
        print(f"[{tag}] {c['name']}: {c['cases']} cases, {c['violations']} violations")
    if out is not None:
        write_json(out / "verify_report.json", report)
    if report["failures"]:
        print("failed checks: " + ", ".join(report["failures"]), file=sys.stderr)
        return EXIT_CHECK
    return EXIT_OK


def parse_scheme(text: str, horizon: int) -> tuple[dict, S.CommScheme]:
    """``i0:I``, ``i1:I1,I2``, ``i2:I1,I2,M`` or ``explicit:t1,t2,...``."""
    kind, _, rest = text.partition(":")
    vals = [int(v) for v in rest.split(",") if v.strip()]
    keys = {"i0": ("interval",), "i1": ("i1", "i2"), "i2": ("i1", "i2", "m")}
    if kind == "explicit":
        spec = {"kind": kind, "members": vals}
    elif kind in keys and len(vals) == len(keys[kind]):
        spec = {"kind": kind, **dict(zip(keys[kind], vals))}
    else:
        raise InvalidConfigError(f"cannot parse scheme {text!r}", field="scheme")
    return spec, _build("scheme", S.from_spec, spec, horizon)


def cmd_stats(spec: dict, scheme: S.CommScheme, rho: float, rule: str, out: Path | None) -> int:
    T = scheme.horizon
    st = S.exact_stats(scheme, rho, rule, with_c=T <= S.MAX_T_C) if T <= S.MAX_T_AB else None
    payload = {
        "format_version": FORMAT_VERSION, "command": "stats", "scheme": spec, "label": scheme.label,
        "horizon": T, "rho": rho, "comms": len(scheme), "gap": S.gap(scheme), "stats": _stats_dict(st),
    }
    if st is not None and st.c_t is not None:
        payload["bounds"] = bound_records(spec, scheme, rho, st)
    text = json.dumps(_json_safe(payload), indent=2, sort_keys=True)
    print(text)
    if out is not None:
        atomic_write(out / "stats.json", text + "\n")
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ldsgd", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="TOML run configuration")
        sp.add_argument("--out", help=f"output directory (default: config 'out', or ${OUT_ENV})")
        sp.add_argument("--seeds", help="comma-separated seeds overriding the config")
        sp.add_argument("--rule", choices=("after", "before"), help="update rule overriding the config")
        sp.add_argument("--threads", type=int, help="worker threads for per-node gradients")

    common(sub.add_parser("run", help="simulate one configuration for every seed"))
    sw = sub.add_parser("sweep", help="grid over (I1, I2) for an i1 scheme")
    common(sw)
    sw.add_argument("--i1", help="comma-separated I1 values")
    sw.add_argument("--i2", help="comma-separated I2 values")
    cd = sub.add_parser("compare-decay", help="fixed i1(I1,I2) against decaying i2(I1,I2,M)")
    common(cd)
    cd.add_argument("--i1", type=int)
    cd.add_argument("--i2", type=int)
    cd.add_argument("--m", type=int)
    vf = sub.add_parser("verify", help="run the theory-verification battery")
    common(vf, config_required=False)
    vf.add_argument("--inject-fault", type=float, nargs="?", const=1.1, default=None,
                    help="scale exact statistics by this factor (default 1.1) as a negative control")
    vf.add_argument("--quick", action="store_true", help="smaller random samples")
    st = sub.add_parser("stats", help="exact statistics and bounds for a scheme, no simulation")
    common(st, config_required=False)
    st.add_argument("--scheme", help="i0:I | i1:I1,I2 | i2:I1,I2,M | explicit:t1,t2,...")
    st.add_argument("--horizon", type=int)
    st.add_argument("--rho", type=float)
    return p


def _apply_overrides(cfg: RunConfig, args) -> RunConfig:
    if args.seeds:
        cfg.seeds = _int_list(args.seeds, None, "seeds")
    if args.rule:
        cfg.rule = args.rule
    if args.threads is not None:
        cfg.threads = args.threads
    from .config import validate

    validate(cfg)
    return cfg


def _out_dir(args, cfg: RunConfig | None) -> Path | None:
    if args.out:
        return Path(args.out)
    if os.environ.get(OUT_ENV):
        return Path(os.environ[OUT_ENV])
    if cfg is not None:
        return Path(cfg.out)
    return None


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _apply_overrides(load(args.config), args) if args.config else None
        out = _out_dir(args, cfg)
        if args.command == "run":
            return cmd_run(cfg, out)
        if args.command == "sweep":
            return cmd_sweep(
                cfg, out,
                _int_list(args.i1, cfg.sweep.get("i1_values"), "sweep.i1_values"),
                _int_list(args.i2, cfg.sweep.get("i2_values"), "sweep.i2_values"),
            )
        if args.command == "compare-decay":
            vals = {}
            for k in ("i1", "i2", "m"):
                v = getattr(args, k)
                v = cfg.decay.get(k) if v is None else v
                if v is None:
                    raise InvalidConfigError("missing value", field=f"decay.{k}")
                vals[k] = int(v)
            return cmd_compare_decay(cfg, out, vals["i1"], vals["i2"], vals["m"])
        if args.command == "verify":
            return cmd_verify(out, args.inject_fault, args.quick)
        if args.command == "stats":
            if args.scheme:
                if args.horizon is None or args.rho is None:
                    raise InvalidConfigError("--scheme needs --horizon and --rho", field="stats")
                spec, scheme = parse_scheme(args.scheme, args.horizon)
                rho, rule = args.rho, args.rule or "after"
            elif cfg is not None:
                spec = cfg.scheme
                scheme = _build("scheme", S.from_spec, spec, cfg.horizon)
                rho, rule = _build("topology", top.from_spec, cfg.topology).rho, cfg.rule
            else:
                raise InvalidConfigError("give --config or --scheme", field="stats")
            if not 0.0 <= rho < 1.0:
                raise InvalidConfigError(f"rho must lie in [0, 1), got {rho}", field="rho")
            return cmd_stats(spec, scheme, rho, rule, out if args.out else None)
    except InvalidConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_CONFIG  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
