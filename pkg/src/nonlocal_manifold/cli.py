"""Command-line front end: validations, residual studies and coupled solves.

    nonlocal-manifold cases
    nonlocal-manifold kernels
    nonlocal-manifold validate --case unit_disk --out runs/disk
    nonlocal-manifold residual --config study.json --assert-slopes
    nonlocal-manifold solve --case interval --mode both

Exit codes: 0 success, 2 config error, 3 numerical failure (including a
failed validation), 4 slope assertion failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .catalog import CASE_IDS, UnknownCaseError, fd_laplace_oracle, get_case
from .geometry import (Disk, GeometryError, Interval, PolarCap, conormal, kappa_n,
                       metric_at, normal_identity_residual, small_deformation_ratio)
from .kernels import COSINE, LEVELS, eval_profile, validate_profile
from .operators import MODES, AccuracyError, NonlocalOperators
from .residuals import (PROBES, QUADRATURES, rate_fit, reports_to_csv, residual_reports,
                        slopes_to_json, solution_error)
from .sampling import ResolutionError, sample_case
from .solve import SingularSystemError, SolveDataError, solve_coupled

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_SLOPES = 0, 2, 3, 4

DEFAULT_LADDERS = {
    "interval": [0.1, 0.05, 0.025, 0.0125],
    "half_circle_arc": [0.1, 0.05, 0.025, 0.0125],
    "unit_disk": [0.2, 0.1, 0.05, 0.025],
    "hemisphere": [0.1, 0.07, 0.05, 0.035],
}

# minimum fitted slopes in corrected mode, and the legacy layer ceiling
SLOPE_FLOORS = {"norm_interior": 1.7, "norm_layer": 1.2, "norm_bd": 2.1,
                "weak_pairing_1": 1.6, "weak_pairing_bump": 1.6}
LEGACY_LAYER_CEILING = 1.1
LEGACY_GAP = 0.3

NUMERIC_ERRORS = (ArithmeticError, AccuracyError, ResolutionError, GeometryError,
                  SolveDataError, np.linalg.LinAlgError)


class ConfigError(ValueError):
    pass


@dataclass
class StudyConfig:
    case_id: str = "unit_disk"
    deltas: list = field(default_factory=list)  # empty → the case's default ladder
    h_ratio: float = 8.0
    mode: str = "corrected"  # corrected | legacy | both
    probes: list = field(default_factory=lambda: list(PROBES))
    outputs: str = "."
    seed: int = 0
    quadrature: str = "local"
    solution: str = ""  # empty → the case's rate solution

    @property
    def modes(self) -> tuple:
        return MODES if self.mode == "both" else (self.mode,)

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> "StudyConfig":
        try:
            case = get_case(self.case_id)
        except UnknownCaseError as exc:
            raise ConfigError(f"case_id: {exc.args[0]}") from None
        if not self.deltas:
            self.deltas = list(DEFAULT_LADDERS[self.case_id])
        try:
            self.deltas = [float(d) for d in self.deltas]
            self.h_ratio = float(self.h_ratio)
        except (TypeError, ValueError):
            raise ConfigError("deltas and h_ratio must be numbers") from None
        if any(not d > 0 for d in self.deltas):
            raise ConfigError("deltas: every δ must be positive")
        if any(b >= a for a, b in zip(self.deltas, self.deltas[1:])):
            raise ConfigError(f"deltas: must be strictly decreasing, got {self.deltas}")
        if max(self.deltas) > case.max_delta:
            raise ConfigError(f"deltas: {max(self.deltas)} exceeds max_delta {case.max_delta} "
                              f"of case {self.case_id}")
        if not self.h_ratio >= 4:
            raise ConfigError(f"h_ratio: must be at least 4, got {self.h_ratio}")
        if self.mode not in MODES + ("both",):
            raise ConfigError(f"mode: expected corrected, legacy or both, got {self.mode!r}")
        if not self.probes or any(p not in PROBES for p in self.probes):
            raise ConfigError(f"probes: expected a non-empty subset of {list(PROBES)}")
        if self.quadrature not in QUADRATURES:
            raise ConfigError(f"quadrature: expected one of {list(QUADRATURES)}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed: must be an integer")
        if self.solution and self.solution not in case.solutions:
            raise ConfigError(f"solution: case {self.case_id} offers {sorted(case.solutions)}")
        return self


def load_config(path) -> dict:
    """Flat JSON object; parse errors carry the line number."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    known = {f.name for f in fields(StudyConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown field(s) {', '.join(unknown)}")
    return data


def build_config(args) -> StudyConfig:
    data = load_config(args.config) if args.config else {}
    if args.case:
        data["case_id"] = args.case
    if args.mode:
        data["mode"] = args.mode
    if args.out:
        data["outputs"] = args.out
    if getattr(args, "quadrature", None):
        data["quadrature"] = args.quadrature
    if getattr(args, "deltas", None):
        try:
            data["deltas"] = [float(s) for s in args.deltas.split(",")]
        except ValueError:
            raise ConfigError(f"--deltas: cannot parse {args.deltas!r}") from None
    if getattr(args, "h_ratio", None):
        data["h_ratio"] = args.h_ratio
    return StudyConfig(**data).validate()


def _write_json(path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _fmt_delta(d: float) -> str:
    return repr(float(d))


# ---------------------------------------------------------------------------
# validate


def _random_params(domain, rng, n: int, margin: float) -> np.ndarray:
    if isinstance(domain, Interval):
        return rng.uniform(domain.lo + margin, domain.hi - margin, size=(n, 1))
    if isinstance(domain, Disk):
        r = (domain.radius - margin) * np.sqrt(rng.uniform(size=n))
        a = rng.uniform(0, 2 * math.pi, size=n)
        return np.column_stack([r * np.cos(a), r * np.sin(a)])
    if isinstance(domain, PolarCap):
        # keep off the coordinate pole, where the polar chart degenerates
        t1 = rng.uniform(0.1, domain.theta_max - margin, size=n)
        return np.column_stack([t1, rng.uniform(0, 2 * math.pi, size=n)])
    raise TypeError(f"no sampler for {type(domain).__name__}")


def _deformation_region(domain, *thetas) -> bool:
    # a polar chart shrinks the angular direction by sin θ₁; the chart lemma is
    # checked only where that factor is at least 1/2
    if isinstance(domain, PolarCap):
        return all(math.sin(t[0]) >= 0.5 for t in thetas)
    return True


def _boundary_params(case, k: int = 8) -> list:
    if case.m == 1:
        return list(case.boundary_chart.labels)
    return [2 * math.pi * (j + 0.5) / k for j in range(k)]


def _check(passed, **detail) -> dict:
    return {"passed": bool(passed), **detail}


def _kernel_checks() -> dict:
    rep = validate_profile(COSINE)
    r = np.linspace(0.05, 0.95, 19)
    step = 1e-5
    chain = 0.0
    for k in range(1, len(LEVELS)):
        deriv = (eval_profile(COSINE, k, r + step) - eval_profile(COSINE, k, r - step)) / (2 * step)
        chain = max(chain, float(np.max(np.abs(deriv + eval_profile(COSINE, k - 1, r)))))
    return {
        "assumptions": _check(rep.passed and abs(rep.delta0 - 0.5) < 1e-12,
                              delta0=rep.delta0, report=rep.as_dict()),
        "antiderivative_chain": _check(chain < 1e-8, max_error=chain, tolerance=1e-8),
    }


def _geometry_checks(case, rng) -> dict:
    chart, bchart = case.chart, case.boundary_chart
    thetas = _random_params(chart.domain, rng, 50, margin=0.02)
    eig_min, inv_err, ratio_lo, ratio_hi = math.inf, 0.0, math.inf, 0.0
    for t in thetas:
        md = metric_at(chart, t)
        eig_min = min(eig_min, float(np.linalg.eigvalsh(md.G).min()))
        inv_err = max(inv_err, float(np.abs(md.G @ md.G_inv - np.eye(case.m)).max()))
        t2 = t + rng.uniform(-0.05, 0.05, size=case.m)
        if chart.domain.contains(t2, tol=0.0) and _deformation_region(chart.domain, t, t2):
            rr = small_deformation_ratio(chart, t, t2)
            ratio_lo, ratio_hi = min(ratio_lo, rr), max(ratio_hi, rr)

    unit, tangent, ortho, kap = 0.0, 0.0, 0.0, []
    for om in _boundary_params(case):
        n = conormal(bchart, om)  # raises on orientation failure
        th = bchart.parent_params(om)
        unit = max(unit, abs(float(np.linalg.norm(n)) - 1.0))
        N = chart.tangent_normals(th)
        if N.size:
            tangent = max(tangent, float(np.abs(N @ n).max()))
        B = bchart.jacobian(om)
        if B.size:
            ortho = max(ortho, float(np.abs(B.T @ n).max()))
        kap.append(kappa_n(bchart, om))

    sol = case.solution()
    errs = []
    for t in thetas[:50]:
        lap1 = fd_laplace_oracle(chart, lambda x: sol.u(x[None, :])[0], t, step=4e-3)
        lap2 = fd_laplace_oracle(chart, lambda x: sol.u(x[None, :])[0], t, step=2e-3)
        lap = (4 * lap2 - lap1) / 3  # Richardson
        errs.append(abs(lap + float(sol.f(chart.map(t)[None, :])[0])))

    steps = [1e-2, 5e-3, 2.5e-3, 1.25e-3]
    oms = _boundary_params(case, 4)
    ident = [max(normal_identity_residual(case, om, s) for om in oms) for s in steps]
    ident_1e3 = max(normal_identity_residual(case, om, 1e-3) for om in oms)
    order = rate_fit(list(zip(steps, np.maximum(ident, 1e-300)))).slope

    return {
        "metric_positive_definite": _check(eig_min > 0, min_eigenvalue=eig_min),
        "metric_inverse": _check(inv_err < 1e-10, max_error=inv_err),
        "small_deformation": _check(0.5 <= ratio_lo and ratio_hi <= 2.0,
                                    min_ratio=ratio_lo, max_ratio=ratio_hi,
                                    region="sin(theta_1) >= 1/2" if isinstance(chart.domain, PolarCap)
                                    else "whole chart"),
        "conormal": _check(max(unit, tangent, ortho) < 1e-8, unit_error=unit,
                           tangency_error=tangent, boundary_orthogonality_error=ortho),
        "kappa_n": _check(all(math.isfinite(k) for k in kap), min=min(kap), max=max(kap)),
        "laplacian_oracle": _check(max(errs) < 1e-8, max_error=max(errs), points=len(errs)),
        "normal_identity": _check(order >= 1.0 and ident_1e3 < 1e-3, steps=steps,
                                  residuals=ident, order=order, residual_at_step_1e3=ident_1e3),
    }


def _sampling_checks(case, cfg) -> dict:
    h = cfg.deltas[0] / cfg.h_ratio
    cloud = sample_case(case, h)
    vol = abs(float(np.sum(cloud.w)) - case.analytic_volume)
    bd = abs(float(np.sum(cloud.s)) - case.analytic_boundary_measure)
    ok = vol < 10 * h**2 * case.analytic_volume and bd < 10 * h**2 * case.analytic_boundary_measure
    return {"measures": _check(ok and bool(np.all(cloud.w > 0)) and bool(np.all(cloud.s > 0)),
                               spacing=h, volume_error=vol, boundary_error=bd)}


def run_validate(cfg: StudyConfig) -> tuple[int, dict]:
    case = get_case(cfg.case_id)
    rng = np.random.default_rng(cfg.seed)
    report = {
        "config": cfg.to_dict(),
        "case": case.describe(),
        "kernel": _kernel_checks(),
        "geometry": _geometry_checks(case, rng),
        "sampling": _sampling_checks(case, cfg),
    }
    failed = [f"{group}.{name}" for group in ("kernel", "geometry", "sampling")
              for name, chk in report[group].items() if not chk["passed"]]
    report["failed"] = failed
    report["passed"] = not failed
    out = Path(cfg.outputs)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "validate.json", report)
    return (EXIT_OK if not failed else EXIT_NUMERIC), report


# ---------------------------------------------------------------------------
# residual study


def _residual_task(cfg_dict: dict, delta: float):
    cfg = StudyConfig(**cfg_dict)
    case = get_case(cfg.case_id)
    cloud = sample_case(case, delta / cfg.h_ratio)
    sol = case.solution(cfg.solution or None)
    return residual_reports(case, delta, cloud, cfg.modes, sol, cfg.quadrature)


def slope_assertions(slopes: dict, probes=PROBES) -> list[str]:
    """Failure messages for the slope floors (corrected) and the legacy contrast."""
    keys = [k for k in SLOPE_FLOORS if not k.startswith("weak_pairing")]
    keys += ["weak_pairing_1" if p == "one" else f"weak_pairing_{p}" for p in probes]
    failures = []
    corr = slopes.get("corrected")
    if corr is not None:
        for key in keys:
            fit = corr[key]
            if "slope" not in fit:
                failures.append(f"corrected {key}: {fit.get('note', 'no fit')}")
            elif not fit["slope"] >= SLOPE_FLOORS[key]:
                failures.append(f"corrected {key}: slope {fit['slope']:.3f} < {SLOPE_FLOORS[key]}")
    leg = slopes.get("legacy")
    if leg is not None:
        fit = leg["norm_layer"]
        if "slope" not in fit:
            failures.append(f"legacy norm_layer: {fit.get('note', 'no fit')}")
        else:
            if not fit["slope"] <= LEGACY_LAYER_CEILING:
                failures.append(f"legacy norm_layer: slope {fit['slope']:.3f} > {LEGACY_LAYER_CEILING}")
            if corr is not None and "slope" in corr["norm_layer"]:
                gap = corr["norm_layer"]["slope"] - fit["slope"]
                if not gap >= LEGACY_GAP:
                    failures.append(f"layer slope gap corrected − legacy {gap:.3f} < {LEGACY_GAP}")
    return failures


def run_residual_study(cfg: StudyConfig, parallel: bool = False, assert_slopes: bool = False,
                       workers: int | None = None) -> tuple[int, dict]:
    out = Path(cfg.outputs)
    out.mkdir(parents=True, exist_ok=True)
    if parallel and len(cfg.deltas) > 1:
        with ProcessPoolExecutor(max_workers=workers or min(len(cfg.deltas), os.cpu_count() or 1)) as ex:
            per_delta = list(ex.map(_residual_task, [cfg.to_dict()] * len(cfg.deltas), cfg.deltas))
        # independent per-δ files, merged below in ladder order
        for d, reps in zip(cfg.deltas, per_delta):
            reports_to_csv(reps, out / f"residual_{_fmt_delta(d)}.csv")
    else:
        per_delta = [_residual_task(cfg.to_dict(), d) for d in cfg.deltas]
    reports = sorted((r for reps in per_delta for r in reps),
                     key=lambda r: (cfg.modes.index(r.mode), -r.delta))
    reports_to_csv(reports, out / "residual_study.csv")
    summary = slopes_to_json(reports, out / "slopes.json", cfg.to_dict())
    failures = slope_assertions(summary["slopes"], cfg.probes) if assert_slopes else []
    if assert_slopes:
        summary["assertions"] = {"passed": not failures, "failures": failures}
        _write_json(out / "slopes.json", summary)
    return (EXIT_SLOPES if failures else EXIT_OK), summary


# ---------------------------------------------------------------------------
# solve


SOLVE_COLUMNS = ("delta", "mode", "error_u", "error_v", "residual", "condition", "method")


def run_solve(cfg: StudyConfig) -> tuple[int, dict]:
    case = get_case(cfg.case_id)
    sol = case.solution(cfg.solution or None)
    out = Path(cfg.outputs)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for delta in cfg.deltas:
        cloud = sample_case(case, delta / cfg.h_ratio)
        f_in, f_bd = sol.f(cloud.X), sol.f(cloud.Y)
        for mode in cfg.modes:
            blocks = NonlocalOperators(cloud, delta, mode=mode).assemble(f_in, f_bd)
            pair = solve_coupled(blocks)
            eu, ev = solution_error(case, pair, cloud, sol)
            suffix = _fmt_delta(delta) if len(cfg.modes) == 1 else f"{_fmt_delta(delta)}_{mode}"
            pair.to_csv(cloud, out / f"solution_{suffix}.csv")
            rows.append({"delta": delta, "mode": mode, "error_u": eu, "error_v": ev,
                         "residual": pair.residual_norm, "condition": pair.condition_estimate,
                         "method": pair.method})
    with open(out / "solve_errors.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(SOLVE_COLUMNS)
        for r in rows:
            w.writerow([r[c] if c in ("mode", "method") else repr(float(r[c])) for c in SOLVE_COLUMNS])
    rates = {}
    for mode in cfg.modes:
        pairs = [(r["delta"], r["error_u"]) for r in rows if r["mode"] == mode]
        try:
            rates[mode] = {"error_u_slope": rate_fit(pairs).slope}
        except ValueError as exc:
            rates[mode] = {"note": str(exc)}
    summary = {"config": cfg.to_dict(), "rows": rows, "rates": rates}
    _write_json(out / "solve.json", summary)
    return EXIT_OK, summary


# ---------------------------------------------------------------------------
# entry point


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nonlocal-manifold",
                                description="Nonlocal Poisson model on manifolds with boundary.")
    sub = p.add_subparsers(dest="command", required=True)

    def study(name, help_):
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", help="flat JSON study config")
        s.add_argument("--case", choices=CASE_IDS)
        s.add_argument("--mode", choices=MODES + ("both",))
        s.add_argument("--out", help="output directory")
        s.add_argument("--deltas", help="comma-separated horizon ladder")
        s.add_argument("--h-ratio", dest="h_ratio", type=float, help="h = δ/ratio")
        return s

    study("validate", "kernel, geometry and sampling checks → validate.json")
    r = study("residual", "truncation residual study → residual_study.csv, slopes.json")
    r.add_argument("--quadrature", choices=QUADRATURES)
    r.add_argument("--assert-slopes", action="store_true", help="exit 4 if slope floors fail")
    r.add_argument("--parallel", action="store_true", help="run the δ ladder in worker processes")
    study("solve", "coupled solves → solution_<delta>.csv, solve_errors.csv")
    c = sub.add_parser("cases", help="list the built-in manifolds")
    c.add_argument("--case", choices=CASE_IDS)
    sub.add_parser("kernels", help="kernel profile validation report")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "cases":
            ids = [args.case] if args.case else CASE_IDS
            print(json.dumps([get_case(i).describe() for i in ids], indent=2, sort_keys=True))
            return EXIT_OK
        if args.command == "kernels":
            checks = _kernel_checks()
            print(json.dumps(checks, indent=2, sort_keys=True))
            return EXIT_OK if all(c["passed"] for c in checks.values()) else EXIT_NUMERIC
        cfg = build_config(args)
        if args.command == "validate":
            code, rep = run_validate(cfg)
            if rep["failed"]:
                print("failed checks: " + ", ".join(rep["failed"]), file=sys.stderr)
        elif args.command == "residual":
            code, summary = run_residual_study(cfg, args.parallel, args.assert_slopes)
            for msg in summary.get("assertions", {}).get("failures", []):
                print(msg, file=sys.stderr)
        else:
            code, _ = run_solve(cfg)
        return code
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SingularSystemError as exc:
        print(f"numerical failure: {exc} (pivot ratio {exc.pivot_ratio:.3e})", file=sys.stderr)
        return EXIT_NUMERIC
    except NUMERIC_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
