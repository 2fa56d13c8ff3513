"""Self-checks on the builtin example against independent closed forms.

Each criterion returns a :class:`CriterionResult`. Oracles used here never go
through the code paths they check: conjugate times come from scalar root
finding on the closed-form determinants, brackets from the affine matrix
algebra, and index counts from the oracle roots.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.optimize import brentq

from .abnormal import abnormal_covector, check_hypotheses
from .flow import Control, IntegratorConfig, endpoint, rho, rho_inverse
from .hessian import assemble_form, bracket_kernels, hessian_zeros, inertia
from .jacobi import INDICATORS, IndicatorFunctions, locate_zeros, scan_grid, structural_functions
from .vfcore import bracket_field, builtin_frame

EXAMPLE = "engel-so3r"
# adaptive steps (abs 1e-10, rel 1e-9) for the self-checks
ACCEPTANCE_INTEGRATOR = IntegratorConfig(method="rk45", rtol=1e-9, atol=1e-10)
# index pairs (F, Ext) between consecutive conjugate times of the example
INDEX_SEQUENCE = ((0, 0), (1, 0), (2, 1), (2, 2), (3, 2), (4, 3), (4, 4), (5, 4), (6, 5))


@dataclass(frozen=True)
class Tolerances:
    zero: float = 1e-4
    agree: float = 2e-4
    goh: float = 1e-8
    strict: float = 1e-8
    j_min: float = 0.1
    bracket: float = 1e-10
    structural: float = 1e-8
    rho: float = 1e-7
    shrink: float = 4.0
    runtime_scan: float = 60.0
    runtime_index: float = 300.0


@dataclass
class CriterionResult:
    key: str
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    detail: str = ""
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] criterion {self.key} ({self.name}): {self.detail} [{self.seconds:.1f}s]"


def a_f(s):
    """Case-a determinant of the example up to a constant factor."""
    return np.sin(s)


def a_ext(s):
    """Case-b determinant of the example up to a constant factor."""
    return s * np.sin(s) + 2.0 * (np.cos(s) - 1.0)


def oracle_roots(fn: Callable[[float], float], b: float, step: float = 1e-2) -> list[float]:
    """Roots of ``fn`` on ``(0, b]`` by bisection between sign changes.

    Integer multiples of pi are exact roots of both closed forms and are
    added directly, since the sampled values there are pure roundoff.
    """
    multiples = [k * np.pi for k in range(1, int(b / np.pi + 1e-12) + 1)]
    exact = [r for r in multiples if abs(fn(r)) < 1e-9 * max(1.0, r * r)]
    grid = np.arange(step, b + step, step)
    vals = np.array([fn(x) for x in grid])
    roots = list(exact)
    for x0, x1, v0, v1 in zip(grid, grid[1:], vals, vals[1:]):
        if v0 * v1 < 0 and not any(x0 - 1e-9 <= r <= x1 + 1e-9 for r in exact):
            roots.append(brentq(fn, x0, x1, xtol=1e-14))
    return sorted(r for r in roots if 0 < r <= b)


def _distance(found: list[float], expected: list[float]) -> float:
    if len(found) != len(expected):
        return float("inf")
    return max((abs(x - y) for x, y in zip(sorted(found), sorted(expected))), default=0.0)


class ExampleRun:
    """Memoized scans of the example so that criteria can share work."""

    def __init__(self, N: int = 400, scan_step: float = 0.02, hessian_N: int = 200, config: IntegratorConfig | None = None):
        self.frame = builtin_frame(EXAMPLE)
        self.N = N
        self.scan_step = scan_step
        self.hessian_N = hessian_N
        self.config = config or ACCEPTANCE_INTEGRATOR
        self.fns = IndicatorFunctions(self.frame, N, self.config)
        self._samples: dict[float, dict[str, float]] = {}
        self._hessian: dict[tuple[float, str], list] = {}

    def samples(self, grid) -> dict[str, np.ndarray]:
        missing = [s for s in grid if float(s) not in self._samples]
        if missing:
            got = self.fns.sample(missing, INDICATORS)
            for i, s in enumerate(missing):
                self._samples[float(s)] = {k: got[k][i] for k in INDICATORS}
        return {k: np.array([self._samples[float(s)][k] for s in grid]) for k in INDICATORS}

    def zeros(self, name: str, b: float) -> list:
        grid = scan_grid((0.0, b), self.scan_step)
        vals = self.samples(grid)[name]
        variant = name.split("-")[1]
        return locate_zeros(self.fns.function(name), (0.0, b), self.scan_step, 1e-10, self.fns.deficiency(variant), samples=vals)

    def hessian(self, variant: str, b: float) -> list:
        key = (b, variant)
        if key not in self._hessian:
            self._hessian[key] = hessian_zeros(self.frame, (0.0, b), 400, variant, self.config, scan_step=0.25)
        return self._hessian[key]

    def pair(self, s: float, N: int | None = None) -> tuple[int, int]:
        data = abnormal_covector(self.frame, s, N or self.hessian_N, self.config)
        k = bracket_kernels(data)
        return inertia(assemble_form(k, "F")).negative, inertia(assemble_form(k, "Ext")).negative


def _zero_check(run: ExampleRun, names, b, expected, tol):
    measured, ok = {}, True
    for name in names:
        zs = run.zeros(name, b)
        d = _distance([z.s for z in zs], expected)
        measured[name] = {"zeros": [z.s for z in zs], "max_error": d}
        ok &= d < tol
    return ok, measured


def criterion_1(run: ExampleRun, tol: Tolerances) -> CriterionResult:
    t0 = time.perf_counter()
    b = 3 * np.pi
    expected = oracle_roots(a_f, b)
    ok, measured = _zero_check(run, ["jacobi-F", "engel-F"], b, expected, tol.zero)
    elapsed = time.perf_counter() - t0
    measured["expected"] = expected
    measured["runtime"] = elapsed
    ok &= elapsed < tol.runtime_scan
    err = max(m["max_error"] for k, m in measured.items() if k in INDICATORS)
    return CriterionResult("1", "conjugate times F", ok, measured, f"max error {err:.2e} (tol {tol.zero:g}), {elapsed:.1f}s")


def criterion_2(run: ExampleRun, tol: Tolerances) -> CriterionResult:
    b = 4 * np.pi
    expected = oracle_roots(a_ext, b)
    ok, measured = _zero_check(run, ["jacobi-Ext", "engel-Ext"], b, expected, tol.zero)
    measured["expected"] = expected
    err = max(m["max_error"] for k, m in measured.items() if k in INDICATORS)
    return CriterionResult("2", "conjugate times Ext", ok, measured, f"max error {err:.2e} (tol {tol.zero:g}), roots {np.round(expected, 6).tolist()}")


def interval_midpoints(count: int = len(INDEX_SEQUENCE)) -> list[float]:
    """Midpoints between consecutive distinct oracle roots of both closed forms."""
    b = np.pi * (count + 1)
    roots = sorted(set(np.round(oracle_roots(a_f, b) + oracle_roots(a_ext, b), 12)))
    edges = [0.0] + roots
    return [0.5 * (lo + hi) for lo, hi in zip(edges, edges[1:])][:count]


def criterion_3(run: ExampleRun, tol: Tolerances) -> CriterionResult:
    t0 = time.perf_counter()
    mids = interval_midpoints()
    pairs = [run.pair(s) for s in mids]
    elapsed = time.perf_counter() - t0
    ok = tuple(pairs) == INDEX_SEQUENCE and elapsed < tol.runtime_index
    measured = {"s": mids, "pairs": pairs, "runtime": elapsed}
    return CriterionResult("3", "index sequence", ok, measured, f"pairs {pairs}")


def criterion_4(run: ExampleRun, tol: Tolerances, samples: int = 20, seed: int = 7) -> CriterionResult:
    b = 6 * np.pi
    zeros = {v: run.zeros(f"jacobi-{v}", b) for v in ("F", "Ext")}
    every = [z.s for zs in zeros.values() for z in zs]
    rng = np.random.default_rng(seed)
    picks: list[float] = []
    while len(picks) < samples:
        s = float(rng.uniform(0.1, b - 0.1))
        if min(abs(s - z) for z in every) > 0.1:
            picks.append(s)
    picks.sort()
    mismatches = []
    for s in picks:
        pair = run.pair(s)
        counts = tuple(sum(z.multiplicity for z in zeros[v] if z.s < s) for v in ("F", "Ext"))
        if pair != counts:
            mismatches.append({"s": s, "hessian": pair, "zeros": counts})
    ok = not mismatches
    detail = f"{samples} horizons, {len(mismatches)} mismatches"
    return CriterionResult("4", "Morse index identity", ok, {"s": picks, "mismatches": mismatches}, detail)


def criterion_5(run: ExampleRun, tol: Tolerances, s: float = 4.0) -> CriterionResult:
    data = abnormal_covector(run.frame, s, run.N, run.config)
    d = dict(data.diagnostics)
    failed = check_hypotheses(data, goh_tol=tol.goh, strict_tol=tol.strict, j_tol=tol.j_min)
    ok = d["corank"] == 1 and not failed
    detail = (
        f"s={s}: corank {d['corank']}, Goh {d['goh_residual']:.1e}, Legendre min {d['legendre_min']:.4f}, "
        f"strictness {d['strictness_residual']:.1e}, J {d['j_projection_norm']:.3f}"
    )
    return CriterionResult("5", "hypothesis battery", ok, {"s": s, "failed": failed, **d}, detail)


def random_rotations(rng, count: int) -> np.ndarray:
    q, r = np.linalg.qr(rng.normal(size=(count, 3, 3)))
    q = q * np.sign(np.einsum("kii->ki", r))[:, None, :]
    q[np.linalg.det(q) < 0, :, 0] *= -1
    return q


def criterion_6(run: ExampleRun, tol: Tolerances, count: int = 50, seed: int = 11) -> CriterionResult:
    frame = run.frame
    rng = np.random.default_rng(seed)
    pts = np.hstack([random_rotations(rng, count).reshape(count, 9), rng.uniform(-10, 10, (count, 1))])
    Y = bracket_field(frame.X1, frame.X2)
    W = bracket_field(frame.X1, Y)
    lhs = W.many(pts)
    rhs = 0.5 * frame.X1.many(pts) - frame.X2.many(pts)
    residual = float(np.max(np.abs(lhs - rhs)))
    sf = structural_functions(frame, np.linspace(0.0, 2 * np.pi, 41), run.config)
    target = {"alpha0": -1.0, "alpha1": 0.0, "beta": 0.5}
    got = {"alpha0": sf.alpha[0], "alpha1": sf.alpha[1], "beta": sf.beta}
    sf_err = max(float(np.max(np.abs(got[k] - v))) for k, v in target.items())
    ok = residual < tol.bracket and sf_err < tol.structural
    measured = {"bracket_residual": residual, "structural_error": sf_err}
    return CriterionResult("6", "bracket ground truth", ok, measured, f"bracket residual {residual:.1e}, structural error {sf_err:.1e}")


def random_control(rng, alpha: float = 0.5) -> Control:
    """Random admissible piecewise-constant control with irregular knots."""
    cells = int(rng.integers(1, 12))
    s = float(rng.uniform(0.2, 6.0))
    knots = np.concatenate([[0.0], np.sort(rng.uniform(0.0, s, cells - 1)), [s]])
    while np.any(np.diff(knots) <= 1e-3):
        knots = np.concatenate([[0.0], np.sort(rng.uniform(0.0, s, cells - 1)), [s]])
    v1 = rng.uniform(-0.2, 0.2, cells) + rng.uniform(-0.5, 1.0)
    v2 = rng.normal(0.0, 1.0, cells)
    return Control(knots, v1, v2)


def resample_bound(control: Control) -> float:
    """Roundoff budget of the cell averaging used to compare controls on a common grid."""
    scale = max(1.0, float(np.max(np.abs(np.concatenate([control.v1, control.v2])))))
    return 8.0 * len(control.knots) * np.finfo(float).eps * scale * control.s / np.min(control.widths)


def rho_battery(frame, count: int = 100, seed: int = 3, config: IntegratorConfig | None = None) -> dict:
    """Endpoint invariance and round trip of the reparametrization on random controls."""
    rng = np.random.default_rng(seed)
    config = config or IntegratorConfig(steps=2000)
    worst_end, worst_trip, over_bound = 0.0, 0.0, 0
    for _ in range(count):
        v = random_control(rng)
        w = rho(v)
        mean = Control(v.knots, np.full_like(v.v1, v.mean_v1()), v.v2)
        worst_end = max(worst_end, float(np.linalg.norm(endpoint(frame, w, config) - endpoint(frame, mean, config))))
        back = rho_inverse(w).resample(v.knots)
        trip = float(np.max(np.abs(np.concatenate([back.v1 - v.v1, back.v2 - v.v2]))))
        worst_trip = max(worst_trip, trip)
        over_bound += trip >= resample_bound(v)
    return {"controls": count, "endpoint_residual": worst_end, "round_trip_residual": worst_trip, "over_bound": over_bound}


def criterion_7(run: ExampleRun, tol: Tolerances, count: int = 100, seed: int = 3) -> CriterionResult:
    measured = rho_battery(run.frame, count, seed, run.config)
    ok = measured["endpoint_residual"] < tol.rho and measured["over_bound"] == 0
    detail = f"endpoint {measured['endpoint_residual']:.1e}, round trip {measured['round_trip_residual']:.1e}"
    return CriterionResult("7", "reparametrization invariance", ok, measured, detail)


def criterion_8(run: ExampleRun, tol: Tolerances, delta: float = 1e-3) -> CriterionResult:
    def spectrum(s, N):
        data = abnormal_covector(run.frame, s, N, run.config)
        return np.linalg.eigvalsh(assemble_form(bracket_kernels(data), "F").restricted())

    before, after = spectrum(np.pi - delta, 400), spectrum(np.pi + delta, 400)
    nearest = lambda e: float(e[np.argmin(np.abs(e))])
    crossed = nearest(before) > 0 > nearest(after) and np.sum(after < 0) == np.sum(before < 0) + 1
    m200 = float(np.min(np.abs(spectrum(np.pi, 200))))
    m400 = float(np.min(np.abs(spectrum(np.pi, 400))))
    ratio = m200 / m400
    ok = bool(crossed) and ratio >= tol.shrink
    measured = {"below": nearest(before), "above": nearest(after), "min_abs_200": m200, "min_abs_400": m400, "ratio": ratio}
    detail = f"eigenvalue {nearest(before):.2e} -> {nearest(after):.2e}, shrink x{ratio:.2f} (need {tol.shrink:g})"
    return CriterionResult("8", "degeneracy onset", ok, measured, detail)


def criterion_9(run: ExampleRun, tol: Tolerances) -> CriterionResult:
    b = 6 * np.pi
    measured, ok = {}, True
    for variant in ("F", "Ext"):
        sets = {
            "hessian": [z.s for z in run.hessian(variant, b)],
            "jacobi": [z.s for z in run.zeros(f"jacobi-{variant}", b)],
            "engel": [z.s for z in run.zeros(f"engel-{variant}", b)],
        }
        names = list(sets)
        dist = {f"{p}/{q}": _distance(sets[p], sets[q]) for i, p in enumerate(names) for q in names[i + 1 :]}
        measured[variant] = {"zeros": sets, "distance": dist}
        ok &= max(dist.values()) < tol.agree
    worst = max(max(m["distance"].values()) for m in measured.values())
    return CriterionResult("9", "cross-method agreement", ok, measured, f"max pairwise distance {worst:.2e} (tol {tol.agree:g})")


CRITERIA = {
    "1": criterion_1,
    "2": criterion_2,
    "3": criterion_3,
    "4": criterion_4,
    "5": criterion_5,
    "6": criterion_6,
    "7": criterion_7,
    "8": criterion_8,
    "9": criterion_9,
}


def run_criteria(keys=None, tolerances: Tolerances | None = None, run: ExampleRun | None = None) -> list[CriterionResult]:
    tolerances = tolerances or Tolerances()
    run = run or ExampleRun()
    keys = list(keys) if keys else list(CRITERIA)
    unknown = [k for k in keys if k not in CRITERIA]
    if unknown:
        raise ValueError(f"unknown criteria {unknown}; expected a subset of {list(CRITERIA)}")
    results = []
    for key in keys:
        t0 = time.perf_counter()
        res = CRITERIA[key](run, tolerances)
        res.seconds = time.perf_counter() - t0
        results.append(res)
    return results
