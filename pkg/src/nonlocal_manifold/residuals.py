"""Truncation residuals of the nonlocal model with exact manufactured fields.

    r_in(x) = L u(x) − G (∂u/∂n)(x) − P f(x)        x ∈ M
    r_bd(x) = D u(x) + R̃(x) ∂u/∂n(x) − Q f(x)      x ∈ ∂M

Residuals are sampled at the nodes of a quadrature cloud.  Two ways of
evaluating the integrals are offered:

``local`` (default)
    Target-centred polar Gauss rules on the exact fields (see
    :mod:`localquad`).  Accurate to near machine precision, so measured
    slopes reflect the model and not the quadrature.

``cloud``
    The cloud's own node sums, i.e. the discrete operators used by the solve.
    At fixed h/δ their relative error does not shrink with δ, and the δ⁻²
    in L turns it into a floor on the interior residual.

Norms, pairings and the layer split always use the cloud weights.  The
analytic split r_in = r_it + r_bl of the theory is not computable; the
combined r_in is measured on {dist > 2δ} and {dist ≤ 2δ}.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .kernels import COSINE, KernelProfile, level_index
from .localquad import LocalQuadrature
from .operators import MODES, NonlocalOperators
from .sampling import QuadratureCloud

QUADRATURES = ("local", "cloud")
PROBES = ("one", "bump")


class InsufficientDataError(ValueError):
    pass


class FitError(ValueError):
    pass


class DegenerateAverageError(ValueError):
    pass


def _check(mode, quadrature):
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    if quadrature not in QUADRATURES:
        raise ValueError(f"unknown quadrature {quadrature!r}; expected one of {QUADRATURES}")


def _dot(a, b):
    return np.einsum("...d,...d->...", a, b)


# ---------------------------------------------------------------------------
# exact-field residuals


class ExactResidual:
    """r_in and r_bd at arbitrary points from target-centred polar rules.

    Both modes share the quadrature work; ``*_modes`` returns a dict keyed by mode.
    """

    def __init__(self, case, delta: float, mode: str = "corrected", solution=None,
                 profile: KernelProfile = COSINE, chunk: int = 256, **rule_kw):
        _check(mode, "local")
        self.case = case
        self.delta = float(delta)
        self.mode = mode
        self.sol = case.solution() if solution is None else solution
        self.q = LocalQuadrature(case, delta, profile=profile, **rule_kw)
        self.chunk = chunk

    def _batches(self, X):
        """Index batches, clear-of-boundary targets first, each batch homogeneous."""
        clear = self.q.clear(X)
        # clear targets use far fewer nodes, so they go in larger batches
        for group, size in ((np.nonzero(clear)[0], 8 * self.chunk), (np.nonzero(~clear)[0], self.chunk)):
            for s in range(0, len(group), size):
                yield group[s:s + size]

    def interior(self, X) -> np.ndarray:
        return self.interior_modes(X, (self.mode,))[self.mode]

    def boundary(self, omega) -> np.ndarray:
        return self.boundary_modes(omega, (self.mode,))[self.mode]

    def interior_modes(self, X, modes=MODES) -> dict:
        for m in modes:
            _check(m, "local")
        X = np.atleast_2d(np.asarray(X, dtype=float))
        out = {m: np.zeros(len(X)) for m in modes}
        for idx in self._batches(X):
            part = self._interior(X[idx])
            for m in modes:
                out[m][idx] = part[m]
        return out

    def _interior(self, X):
        q, S, d = self.q, self.sol, self.delta
        v = q.volume(X)
        Lu = np.sum((S.u(X)[:, None] - S.u(v.Y)) * q.kernel(0, v.sq) * v.W, axis=1) / d**2
        Pf = np.sum(S.f(v.Y) * q.kernel(1, v.sq) * v.W, axis=1)
        b = q.boundary(X)
        Kb = q.kernel(1, b.sq) * b.W
        un = S.du_dn(b.Y)
        xn = _dot(X[:, None, :] - b.Y, q.boundary_data.normal(b.omega))
        G0 = 2.0 * np.sum(un * Kb, axis=1)
        Gk = np.sum(un * xn * q.boundary_data.kappa(b.omega) * Kb, axis=1)
        Pb = np.sum(xn * S.f(b.Y) * Kb, axis=1)
        legacy = Lu - G0 - Pf
        return {"legacy": legacy, "corrected": legacy - Gk + Pb}

    def boundary_modes(self, omega, modes=MODES) -> dict:
        for m in modes:
            _check(m, "local")
        omega = np.atleast_1d(np.asarray(omega))
        bd = self.q.boundary_data
        if self.case.m == 1:
            omega = omega.astype(int)
            Y = np.array([self.case.boundary_chart.map(o) for o in omega]).reshape(len(omega), -1)
        else:
            Y = np.array([self.case.boundary_chart.map(o) for o in omega])
        normal = np.asarray(bd.normal(omega)).reshape(Y.shape)
        kappa = np.asarray(bd.kappa(omega)).reshape(len(Y))
        out = {m: np.zeros(len(Y)) for m in modes}
        for s in range(0, len(Y), self.chunk):
            sl = slice(s, s + self.chunk)
            part = self._boundary(Y[sl], normal[sl], kappa[sl])
            for m in modes:
                out[m][sl] = part[m]
        return out

    def _boundary(self, Y, normal, kappa):
        q, S, d = self.q, self.sol, self.delta
        v = q.volume(Y)
        Kbar = q.kernel(1, v.sq) * v.W
        u = S.u(v.Y)
        un = S.du_dn(Y)
        xn = _dot(Y[:, None, :] - v.Y, normal[:, None, :])
        D0 = 2.0 * np.sum(u * Kbar, axis=1)
        Dk = kappa * np.sum(u * xn * Kbar, axis=1)
        b = q.boundary(Y)
        Rt = 4.0 * d**2 * np.sum(q.kernel(2, b.sq) * b.W, axis=1)
        Rk = kappa * np.sum(xn**2 * Kbar, axis=1)
        Qf = -2.0 * d**2 * np.sum(S.f(v.Y) * q.kernel(2, v.sq) * v.W, axis=1)
        legacy = D0 + Rt * un - Qf
        return {"legacy": legacy, "corrected": legacy - Dk - Rk * un}


def residual_interior(case, delta: float, cloud: QuadratureCloud, mode: str = "corrected",
                      solution=None, quadrature: str = "local", **kw) -> np.ndarray:
    """r_in at every interior node of the cloud."""
    _check(mode, quadrature)
    sol = case.solution() if solution is None else solution
    if quadrature == "local":
        return ExactResidual(case, delta, mode, sol, **kw).interior(cloud.X)
    ops = NonlocalOperators(cloud, delta, mode=mode, **kw)
    u, f = sol.u(cloud.X), sol.f(cloud.X)
    return ops.apply_L(u) - ops.apply_G(sol.du_dn(cloud.Y)) - ops.apply_P(f, sol.f(cloud.Y))


def residual_boundary(case, delta: float, cloud: QuadratureCloud, mode: str = "corrected",
                      solution=None, quadrature: str = "local", **kw) -> np.ndarray:
    """r_bd at every boundary node of the cloud."""
    _check(mode, quadrature)
    sol = case.solution() if solution is None else solution
    if quadrature == "local":
        return ExactResidual(case, delta, mode, sol, **kw).boundary(cloud.omega)
    ops = NonlocalOperators(cloud, delta, mode=mode, **kw)
    return (ops.apply_D(sol.u(cloud.X)) + ops.tilde_R() * sol.du_dn(cloud.Y)
            - ops.apply_Q(sol.f(cloud.X)))


# ---------------------------------------------------------------------------
# norms, pairings, averages


def layer_mask(cloud: QuadratureCloud, delta: float) -> np.ndarray:
    """Interior nodes within 2δ of the boundary (nearest boundary node distance)."""
    return cloud.boundary_distance() <= 2.0 * delta


def region_split_norms(cloud: QuadratureCloud, delta: float, values) -> tuple[float, float]:
    """(L² over {dist > 2δ}, L² over {dist ≤ 2δ}) with the cloud weights."""
    values = np.asarray(values, dtype=float)
    if values.shape != cloud.w.shape:
        raise ValueError(f"expected {cloud.n_interior} node values, got {values.shape}")
    lay = layer_mask(cloud, delta)
    sq = values**2 * cloud.w
    return float(math.sqrt(np.sum(sq[~lay]))), float(math.sqrt(np.sum(sq[lay])))


def boundary_norm(cloud: QuadratureCloud, values) -> float:
    values = np.asarray(values, dtype=float)
    return float(math.sqrt(np.sum(values**2 * cloud.s)))


def probe_values(case, probe: str, X) -> np.ndarray:
    """Weak-form test functions: the constant 1 and a smooth Gaussian bump."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if probe == "one":
        return np.ones(len(X))
    if probe == "bump":
        c = np.asarray(case.probe_center, dtype=float)
        return np.exp(-np.sum((X - c) ** 2, axis=1) / 0.5)
    raise ValueError(f"unknown probe {probe!r}; expected one of {PROBES}")


def weak_pairing(cloud: QuadratureCloud, values, probe) -> float:
    """Σ values_i · f₁(x_i) · w_i."""
    values = np.asarray(values, dtype=float)
    probe = np.asarray(probe, dtype=float)
    if values.shape != cloud.w.shape or probe.shape != cloud.w.shape:
        raise ValueError("field and probe must be sampled at the interior nodes")
    return float(np.sum(values * probe * cloud.w))


def weighted_average(cloud: QuadratureCloud, delta: float, f1, level="Rbar", x=None,
                     profile: KernelProfile = COSINE) -> float | np.ndarray:
    """(1/ω_δ(x)) Σ f₁(y) K_level(x, y) w_y with ω_δ(x) = Σ K_level(x, y) w_y."""
    k = level_index(level)
    if k not in (1, 2):
        raise ValueError("weighted averages use the R̄ or R̿ level")
    ops = NonlocalOperators(cloud, delta, profile=profile, check_ratio=False)
    f1 = np.asarray(f1, dtype=float)
    targets = cloud.X if x is None else np.atleast_2d(np.asarray(x, dtype=float))
    sums = ops.interior_engine.sums(targets, np.column_stack([cloud.w, cloud.w * f1]), [k, k])
    if np.any(sums[:, 0] <= 0):
        raise DegenerateAverageError("kernel weight vanishes at a target")
    out = sums[:, 1] / sums[:, 0]
    return float(out[0]) if x is not None and np.ndim(x) == 1 else out


# ---------------------------------------------------------------------------
# slope fits


@dataclass
class RateFit:
    deltas: list
    errors: list
    slope: float
    intercept: float
    r_squared: float


def rate_fit(pairs) -> RateFit:
    """Least-squares slope of ln(error) against ln(δ)."""
    pairs = [(float(d), float(e)) for d, e in pairs]
    if len(pairs) < 3:
        raise InsufficientDataError(f"rate fit needs at least 3 points, got {len(pairs)}")
    d = np.array([p[0] for p in pairs])
    e = np.array([p[1] for p in pairs])
    if np.any(d <= 0) or np.any(e <= 0) or not np.all(np.isfinite(e)):
        raise FitError("rate fit needs positive finite deltas and errors")
    x, y = np.log(d), np.log(e)
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - float(np.sum(resid**2)) / ss if ss > 0 else 1.0
    return RateFit(d.tolist(), e.tolist(), float(slope), float(intercept), r2)


# ---------------------------------------------------------------------------
# reports


@dataclass
class ResidualReport:
    case_id: str
    delta: float
    mode: str
    quadrature: str
    spacing: float
    r_in: np.ndarray = field(repr=False)
    r_bd: np.ndarray = field(repr=False)
    norm_interior_region: float
    norm_layer: float
    norm_bd: float
    weak_pairing: dict  # probe → value
    n_interior_region: int
    n_layer: int

    def row(self) -> dict:
        out = {
            "delta": self.delta,
            "mode": self.mode,
            "norm_interior": self.norm_interior_region,
            "norm_layer": self.norm_layer,
            "norm_bd": self.norm_bd,
        }
        for p in PROBES:
            key = "1" if p == "one" else p
            out[f"weak_pairing_{key}"] = self.weak_pairing.get(p, float("nan"))
        return out


def _report(case, delta, cloud, mode, quadrature, r_in, r_bd) -> ResidualReport:
    ni, nl = region_split_norms(cloud, delta, r_in)
    lay = layer_mask(cloud, delta)
    pair = {p: weak_pairing(cloud, r_in, probe_values(case, p, cloud.X)) for p in PROBES}
    return ResidualReport(case.case_id, float(delta), mode, quadrature, cloud.spacing, r_in, r_bd,
                          ni, nl, boundary_norm(cloud, r_bd), pair,
                          int(np.sum(~lay)), int(np.sum(lay)))


def residual_report(case, delta: float, cloud: QuadratureCloud, mode: str = "corrected",
                    solution=None, quadrature: str = "local", **kw) -> ResidualReport:
    r_in = residual_interior(case, delta, cloud, mode, solution, quadrature, **kw)
    r_bd = residual_boundary(case, delta, cloud, mode, solution, quadrature, **kw)
    return _report(case, delta, cloud, mode, quadrature, r_in, r_bd)


def residual_reports(case, delta: float, cloud: QuadratureCloud, modes=MODES,
                     solution=None, quadrature: str = "local", **kw) -> list[ResidualReport]:
    """One report per mode; the local rules are built once and shared."""
    modes = tuple(modes)
    for m in modes:
        _check(m, quadrature)
    if quadrature != "local":
        return [residual_report(case, delta, cloud, m, solution, quadrature, **kw) for m in modes]
    ex = ExactResidual(case, delta, modes[0], solution, **kw)
    r_in = ex.interior_modes(cloud.X, modes)
    r_bd = ex.boundary_modes(cloud.omega, modes)
    return [_report(case, delta, cloud, m, quadrature, r_in[m], r_bd[m]) for m in modes]


CSV_COLUMNS = ("delta", "mode", "norm_interior", "norm_layer", "norm_bd",
               "weak_pairing_1", "weak_pairing_bump")

SLOPE_KEYS = ("norm_interior", "norm_layer", "norm_bd", "weak_pairing_1", "weak_pairing_bump")


def reports_to_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(CSV_COLUMNS)
        for rep in reports:
            row = rep.row()
            out.writerow([row[c] if c == "mode" else repr(float(row[c])) for c in CSV_COLUMNS])


def fit_slopes(reports) -> dict:
    """Per mode, a RateFit (as dict) for each reported quantity, or a note."""
    out = {}
    for mode in sorted({r.mode for r in reports}):
        rows = sorted((r for r in reports if r.mode == mode), key=lambda r: -r.delta)
        fits = {}
        for key in SLOPE_KEYS:
            pairs = [(r.delta, abs(r.row()[key])) for r in rows]
            try:
                fits[key] = asdict(rate_fit(pairs))
            except (InsufficientDataError, FitError) as exc:
                fits[key] = {"note": str(exc)}
        out[mode] = fits
    return out


def slopes_to_json(reports, path, config: dict | None = None) -> dict:
    summary = {"config": config or {}, "slopes": fit_slopes(reports)}
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


# ---------------------------------------------------------------------------
# solved fields


def solution_error(case, solution, cloud: QuadratureCloud, exact=None):
    """(L² error of u_δ against u, L²(∂M) error of v_δ against ∂u/∂n).

    ``exact`` is a solution label of the case or a ManufacturedSolution.
    """
    sol = exact if hasattr(exact, "du_dn") else case.solution(exact)
    eu = np.asarray(solution.u) - sol.u(cloud.X)
    ev = np.asarray(solution.v) - sol.du_dn(cloud.Y)
    return float(math.sqrt(np.sum(eu**2 * cloud.w))), float(math.sqrt(np.sum(ev**2 * cloud.s)))
