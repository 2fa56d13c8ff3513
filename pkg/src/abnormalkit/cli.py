"""Command-line front end.

Exit codes: 0 success, 1 usage or I/O error, 2 a standing hypothesis or the
chosen method does not apply, 3 a self-check failed.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .abnormal import HypothesisError, abnormal_covector, check_hypotheses
from .flow import IntegratorConfig
from .hessian import VARIANTS, assemble_form, bracket_kernels, hessian_zeros, inertia
from .jacobi import DimensionError, check_method, conjugate_time_table, scan_grid, shooting_determinant
from .report import PROFILE_COLUMNS, dumps, gnuplot_script, profile_figure, write_csv
from .verify import ExampleRun, Tolerances, rho_battery, run_criteria
from .vfcore import DiffConfig, FrameError, load_frame

log = logging.getLogger("abnormalkit")

EXIT_OK, EXIT_USAGE, EXIT_HYPOTHESIS, EXIT_VERIFY = 0, 1, 2, 3
METHODS = ("hessian", "jacobi", "engel", "all")


class UsageError(ValueError):
    pass


@dataclass
class RunConfig:
    frame: str = "engel-so3r"
    s: float | None = None
    s_min: float = 0.0
    s_max: float | None = None
    step: float | None = None
    grid: int = 400
    method: str = "all"
    variant: str = "both"
    integrator: str | None = None
    steps: int = 2000
    diff: str = "dual"
    fd_step: float = 1e-5
    tol_rank: float = 1e-7
    tol_goh: float = 1e-8
    tol_strict: float = 1e-6
    tol_inertia: float = 1e-6
    tol_root: float = 1e-10
    tol_zero: float = 1e-4
    tol_agree: float = 2e-4
    hessian_step: float = 0.25
    out: str | None = None
    emit_gnuplot: str | None = None
    figure: str | None = None
    trajectory: str | None = None
    criteria: str | None = None
    count: int = 100
    seed: int = 3

    @classmethod
    def from_namespace(cls, ns: argparse.Namespace) -> "RunConfig":
        names = {f.name for f in fields(cls)}
        cfg = cls(**{k: v for k, v in vars(ns).items() if k in names and v is not None})
        cfg.validate()
        return cfg

    def validate(self) -> None:
        positive = ("grid", "steps", "fd_step", "tol_rank", "tol_goh", "tol_strict", "tol_inertia", "tol_root",
                    "tol_zero", "tol_agree", "hessian_step", "count")
        for name in positive:
            value = getattr(self, name)
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise UsageError(f"--{name.replace('_', '-')} must be positive, got {value!r}")
        for name in ("s", "step", "s_max"):
            value = getattr(self, name)
            if value is not None and not value > 0:
                raise UsageError(f"--{name.replace('_', '-')} must be positive, got {value!r}")
        if self.s_min < 0:
            raise UsageError("--s-min must be non-negative")
        if self.grid < 4:
            raise UsageError("--grid must be at least 4")

    def integrator_config(self, default: str = "rk4") -> IntegratorConfig:
        return IntegratorConfig(method=self.integrator or default, steps=self.steps)

    def load(self):
        return load_frame(self.frame, DiffConfig(self.diff, self.fd_step))

    def interval(self) -> tuple[float, float]:
        if self.s_max is None:
            raise UsageError("--s-max is required")
        return self.s_min, self.s_max

    def variants(self) -> tuple[str, ...]:
        return VARIANTS if self.variant == "both" else (self.variant,)


def _emit(cfg: RunConfig, report: dict) -> None:
    text = dumps(report)
    if cfg.out:
        Path(cfg.out).write_text(text + "\n")
    else:
        print(text)


def cmd_analyze(cfg: RunConfig) -> int:
    if cfg.s is None:
        raise UsageError("--s is required")
    frame = cfg.load()
    data = abnormal_covector(frame, cfg.s, cfg.grid, cfg.integrator_config(), cfg.tol_rank)
    failed = check_hypotheses(data, cfg.tol_goh, cfg.tol_strict)
    k = bracket_kernels(data)
    forms = {v: inertia(assemble_form(k, v), cfg.tol_inertia) for v in VARIANTS}
    report = {
        "frame": frame.name,
        "s": cfg.s,
        "grid": cfg.grid,
        **data.diagnostics,
        "lambda_s": data.lambda_s.tolist(),
        "indF": forms["F"].negative,
        "nullF": forms["F"].null,
        "indExt": forms["Ext"].negative,
        "nullExt": forms["Ext"].null,
        "failed": failed,
        "passed": not failed,
    }
    if cfg.trajectory:
        c = data.curve
        write_csv(cfg.trajectory, ["t"] + [f"x{i + 1}" for i in range(frame.ambient_dim)], np.column_stack([c.times, c.points]).tolist())
    _emit(cfg, report)
    if failed:
        print(f"error: hypothesis check failed: {', '.join(failed)}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    return EXIT_OK


def _agreement(sets: dict[str, list[float]]) -> dict[str, float | None]:
    names = list(sets)
    table = {}
    for i, p in enumerate(names):
        for q in names[i + 1 :]:
            a, b = sets[p], sets[q]
            table[f"{p}/{q}"] = max((abs(x - y) for x, y in zip(a, b)), default=0.0) if len(a) == len(b) else None
    return table


def require_hypotheses(frame, cfg: RunConfig, horizon: float, need_strict: bool) -> None:
    """Fail early, naming the check, when the curve up to ``horizon`` violates a standing hypothesis."""
    data = abnormal_covector(frame, horizon, cfg.grid, cfg.integrator_config(), cfg.tol_rank)
    failed = check_hypotheses(data, cfg.tol_goh, cfg.tol_strict, need_strict)
    if failed:
        exc = HypothesisError(f"{', '.join(failed)} at s={horizon:g}; run analyze for the diagnostics")
        exc.check = failed[0]
        raise exc


def cmd_conjugate(cfg: RunConfig) -> int:
    frame = cfg.load()
    interval = cfg.interval()
    methods = ("hessian", "jacobi", "engel") if cfg.method == "all" else (cfg.method,)
    if cfg.method == "all" and frame.intrinsic_dim != 4:
        methods = ("hessian", "jacobi")
    step = cfg.step or 0.02
    names = [f"{m}-{v}" for m in methods if m != "hessian" for v in cfg.variants()]
    for name in names:
        check_method(frame, name)
    if interval[1] > interval[0]:
        require_hypotheses(frame, cfg, interval[1], need_strict="Ext" in cfg.variants())
    log.info("conjugate times of %s on %s by %s", frame.name, interval, ", ".join(methods))
    table = conjugate_time_table(frame, interval, names, cfg.grid, step, cfg.tol_root, cfg.integrator_config()) if names else {}
    report: dict = {"frame": frame.name, "interval": list(interval), "grid": cfg.grid, "methods": list(methods), "zeros": {}}
    for v in cfg.variants():
        per = {}
        if "hessian" in methods:
            zs = hessian_zeros(frame, interval, cfg.grid, v, cfg.integrator_config(), cfg.hessian_step)
            per["hessian"] = [{"s": z.s, "multiplicity": z.multiplicity} for z in zs]
        for m in methods:
            if m != "hessian":
                per[m] = [{"s": z.s, "multiplicity": z.multiplicity, "tangential": z.tangential} for z in table[f"{m}-{v}"]]
        report["zeros"][v] = per
        if len(per) > 1:
            report.setdefault("agreement", {})[v] = _agreement({m: [z["s"] for z in zs] for m, zs in per.items()})
    _emit(cfg, report)
    return EXIT_OK


def profile_rows(frame, s_values, N, config, tol) -> list[dict]:
    rows = []
    for s in s_values:
        data = abnormal_covector(frame, float(s), N, config)
        k = bracket_kernels(data)
        fi, ei = (inertia(assemble_form(k, v), tol) for v in VARIANTS)
        try:
            a_f = shooting_determinant(data, "a").determinant
            a_ext = shooting_determinant(data, "b").determinant
        except DimensionError:
            a_f = a_ext = float("nan")
        rows.append({
            "s": float(s), "aF": a_f, "aExt": a_ext,
            "indF": fi.negative, "nullF": fi.null, "indExt": ei.negative, "nullExt": ei.null,
            "minAbsEig": min(fi.min_abs, ei.min_abs),
        })
    return rows


def profile_horizons(interval: tuple[float, float], step: float) -> np.ndarray:
    """``a + k * step`` inside ``(a, b]``, or just ``b`` when the step overshoots."""
    a, b = interval
    grid = scan_grid(interval, step)
    grid = grid[grid <= b + 1e-9 * max(1.0, b)]
    return grid if len(grid) else np.array([b])


def cmd_profile(cfg: RunConfig) -> int:
    frame = cfg.load()
    a, b = cfg.interval()
    if b <= a:
        raise UsageError("--s-max must exceed --s-min")
    horizons = profile_horizons((a, b), cfg.step or 0.05)
    require_hypotheses(frame, cfg, b, need_strict=True)
    log.info("profiling %s at %d horizons in (%g, %g]", frame.name, len(horizons), a, b)
    rows = profile_rows(frame, horizons, cfg.grid, cfg.integrator_config(), cfg.tol_inertia)
    table = [[r[c] for c in PROFILE_COLUMNS] for r in rows]
    write_csv(cfg.out or sys.stdout, PROFILE_COLUMNS, table)
    if cfg.emit_gnuplot:
        if not cfg.out:
            raise UsageError("--emit-gnuplot needs --out for the CSV it plots")
        image = str(Path(cfg.emit_gnuplot).with_suffix(".png").name)
        Path(cfg.emit_gnuplot).write_text(gnuplot_script(cfg.out, image))
    if cfg.figure:
        profile_figure(cfg.figure, rows, title=frame.name)
    return EXIT_OK


def cmd_verify_example(cfg: RunConfig) -> int:
    keys = [k.strip() for k in cfg.criteria.split(",") if k.strip()] if cfg.criteria else None
    tol = Tolerances(zero=cfg.tol_zero, agree=cfg.tol_agree)
    results = run_criteria(keys, tol, ExampleRun(config=cfg.integrator_config(default="rk45")))
    for r in results:
        print(r.line(), file=sys.stderr)
    failed = [r.key for r in results if not r.passed]
    _emit(cfg, {
        "passed": not failed,
        "failed": failed,
        "criteria": [{"key": r.key, "name": r.name, "passed": r.passed, "detail": r.detail, "seconds": r.seconds, "measured": r.measured} for r in results],
    })
    return EXIT_VERIFY if failed else EXIT_OK


def cmd_rho_check(cfg: RunConfig) -> int:
    frame = cfg.load()
    res = rho_battery(frame, cfg.count, cfg.seed, cfg.integrator_config())
    passed = res["endpoint_residual"] < 1e-7 and res["over_bound"] == 0
    _emit(cfg, {"frame": frame.name, **res, "passed": passed})
    return EXIT_OK if passed else EXIT_VERIFY


COMMANDS = {
    "analyze": cmd_analyze,
    "conjugate": cmd_conjugate,
    "profile": cmd_profile,
    "verify-example": cmd_verify_example,
    "rho-check": cmd_rho_check,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file whose keys mirror the long flags")
    common.add_argument("--frame", help="builtin frame name or JSON frame file (default engel-so3r)")
    common.add_argument("--grid", type=int, help="cells of the control grid N (default 400)")
    common.add_argument("--integrator", choices=("rk4", "rk45"), help="flow integrator (default rk4; rk45 for verify-example)")
    common.add_argument("--steps", type=int, help="RK4 steps per horizon (default 2000)")
    common.add_argument("--diff", choices=("dual", "fd"), help="differentiation of expression fields (default dual)")
    common.add_argument("--fd-step", type=float, help="finite difference step (default 1e-5)")
    common.add_argument("--tol-rank", type=float, help="relative singular value cut for ranks (default 1e-7)")
    common.add_argument("--tol-inertia", type=float, help="relative eigenvalue cut for null counts (default 1e-6)")
    common.add_argument("--out", help="output file (default stdout)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="abnormalkit", description="Conjugate times along singular curves of rank-two distributions.")
    sub = p.add_subparsers(dest="command", required=True)

    hyp = argparse.ArgumentParser(add_help=False)
    hyp.add_argument("--tol-goh", type=float, help="bound on the Goh residual (default 1e-8)")
    hyp.add_argument("--tol-strict", type=float, help="bound on the strictness residual (default 1e-6)")

    a = sub.add_parser("analyze", parents=[common, hyp], help="hypothesis battery and Hessian indices at one horizon")
    a.add_argument("--s", type=float, help="horizon")
    a.add_argument("--trajectory", help="write the reference curve as CSV (t, x1..xn)")

    rng = argparse.ArgumentParser(add_help=False)
    rng.add_argument("--s-min", type=float, help="left end of the horizon range (default 0)")
    rng.add_argument("--s-max", type=float, help="right end of the horizon range")
    rng.add_argument("--step", type=float, help="scan step (default 0.02 for conjugate, 0.05 for profile)")

    c = sub.add_parser("conjugate", parents=[common, rng, hyp], help="conjugate times by one or all methods")
    c.add_argument("--method", choices=METHODS, help="default all")
    c.add_argument("--variant", choices=("F", "Ext", "both"), help="default both")
    c.add_argument("--tol-root", type=float, help="root refinement tolerance (default 1e-10)")
    c.add_argument("--hessian-step", type=float, help="scan step of the Hessian method (default 0.25)")

    pr = sub.add_parser("profile", parents=[common, rng, hyp], help="indicator and index table as CSV")
    pr.add_argument("--emit-gnuplot", help="write a gnuplot script plotting the CSV")
    pr.add_argument("--figure", help="also render the profile to an image (needs matplotlib)")

    v = sub.add_parser("verify-example", parents=[common], help="run the self-checks on the builtin example")
    v.add_argument("--criteria", help="comma separated subset, e.g. 1,5,6")
    v.add_argument("--tol-zero", type=float, help="tolerance on conjugate times (default 1e-4)")
    v.add_argument("--tol-agree", type=float, help="tolerance between methods (default 2e-4)")

    r = sub.add_parser("rho-check", parents=[common], help="reparametrization invariance on random controls")
    r.add_argument("--count", type=int, help="number of random controls (default 100)")
    r.add_argument("--seed", type=int, help="random seed (default 3)")
    return p


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    ns = parser.parse_args(argv)
    if not ns.config:
        return ns
    try:
        raw = json.loads(Path(ns.config).read_text())
    except OSError as exc:
        raise UsageError(f"cannot read config {ns.config}: {exc.strerror}") from exc
    except json.JSONDecodeError as exc:
        raise UsageError(f"{ns.config}: invalid JSON ({exc})") from exc
    if not isinstance(raw, dict):
        raise UsageError(f"{ns.config}: expected a JSON object")
    given = {k.lstrip("-").replace("-", "_"): v for k, v in raw.items()}
    unknown = sorted(set(given) - set(vars(ns)))
    if unknown:
        raise UsageError(f"{ns.config}: unknown keys {unknown}")
    # flags on the command line win over the file
    for key, value in given.items():
        if getattr(ns, key) is None:
            setattr(ns, key, value)
    return ns


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else argv
    try:
        ns = _apply_config(parser, argv)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = RunConfig.from_namespace(ns)
        return COMMANDS[ns.command](cfg)
    except (HypothesisError, DimensionError) as exc:
        check = getattr(exc, "check", "dimension")
        print(f"error: hypothesis '{check}' failed: {exc}", file=sys.stderr)
        return EXIT_HYPOTHESIS
    except (UsageError, FrameError, OSError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
