"""Built-in manifold cases with manufactured solutions.

Each case carries one global chart, a boundary chart, and a few smooth
fields ``u`` vanishing on ∂M.  Fields are written in ambient coordinates with
analytic gradient and Hessian, so ``f = -Δ_M u`` follows from an ambient
formula: the trace of the Hessian for flat cases, and for unit spheres

    Δ_M u = tr ∇²u − x·∇²u·x − m x·∇u.

The chart-based Laplace–Beltrami operator and the finite-difference oracle
below are independent routes to the same quantity and are used as checks.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import (
    AmbientField,
    BoundaryChart,
    Chart,
    CircleArcChart,
    CircleBoundary,
    Disk,
    DomainError,
    IdentityChart,
    Interval,
    PointBoundary,
    SphericalChart,
    metric_at,
)


class UnknownCaseError(KeyError):
    pass


@dataclass(frozen=True)
class ManufacturedSolution:
    label: str
    field: AmbientField
    du_dn: Callable[[np.ndarray], np.ndarray]
    laplacian_rule: Callable = field(repr=False)

    def u(self, X) -> np.ndarray:
        return np.asarray(self.field.value(np.asarray(X, dtype=float)), dtype=float)

    def f(self, X) -> np.ndarray:
        return -self.laplacian_rule(self.field, np.asarray(X, dtype=float))

    def scaled(self, c: float) -> "ManufacturedSolution":
        fld = self.field
        return ManufacturedSolution(
            label=f"{c}*{self.label}",
            field=AmbientField(lambda X: c * fld.value(X), lambda X: c * fld.grad(X),
                               lambda X: c * fld.hess(X)),
            du_dn=lambda Y: c * self.du_dn(Y),
            laplacian_rule=self.laplacian_rule,
        )


def flat_laplacian(fld: AmbientField, X) -> np.ndarray:
    return np.trace(fld.hess(X), axis1=-2, axis2=-1)


def sphere_laplacian(m: int):
    def rule(fld: AmbientField, X):
        H = fld.hess(X)
        g = fld.grad(X)
        xHx = np.einsum("...i,...ij,...j->...", X, H, X)
        return np.trace(H, axis1=-2, axis2=-1) - xHx - m * np.einsum("...i,...i->...", X, g)

    return rule


@dataclass(frozen=True)
class ManifoldCase:
    case_id: str
    m: int
    d: int
    chart: Chart
    boundary_chart: BoundaryChart
    reach_proxy: float
    max_delta: float
    analytic_volume: float
    analytic_boundary_measure: float
    solutions: dict
    rate_solution: str
    probe_center: tuple = ()  # centre of the smooth bump probe, ambient coordinates
    notes: str = ""

    def solution(self, label: str | None = None) -> ManufacturedSolution:
        key = self.rate_solution if label is None else label
        try:
            return self.solutions[key]
        except KeyError:
            raise KeyError(f"case {self.case_id} has no solution {key!r}; "
                           f"available: {sorted(self.solutions)}") from None

    def describe(self) -> dict:
        return {
            "case_id": self.case_id,
            "m": self.m,
            "d": self.d,
            "chart": self.chart.name,
            "boundary_chart": self.boundary_chart.name,
            "reach_proxy": self.reach_proxy,
            "max_delta": self.max_delta,
            "analytic_volume": self.analytic_volume,
            "analytic_boundary_measure": self.analytic_boundary_measure,
            "solutions": sorted(self.solutions),
            "rate_solution": self.rate_solution,
            "probe_center": list(self.probe_center),
            "notes": self.notes,
        }

    def to_json(self) -> str:
        return json.dumps(self.describe(), indent=2, sort_keys=True)


# ---------------------------------------------------------------------------
# field helpers; every function accepts (..., d) arrays


def _c(X, i):
    return X[..., i]


def _stack(*cols):
    return np.stack(np.broadcast_arrays(*cols), axis=-1)


def _hess(X, entries: dict, d: int):
    shape = np.shape(X)[:-1]
    H = np.zeros(shape + (d, d))
    for (i, j), v in entries.items():
        H[..., i, j] = v
        H[..., j, i] = v
    return H


def _zeros(X):
    return np.zeros(np.shape(X)[:-1])


# ---------------------------------------------------------------------------
# cases


def _interval() -> ManifoldCase:
    chart = IdentityChart(Interval(0.0, 1.0), name="interval_identity")
    bchart = PointBoundary(chart, [0.0, 1.0])
    rule = flat_laplacian
    pi = math.pi
    quad = ManufacturedSolution(
        "quadratic",
        AmbientField(lambda X: _c(X, 0) * (1 - _c(X, 0)),
                     lambda X: _stack(1 - 2 * _c(X, 0)),
                     lambda X: _hess(X, {(0, 0): -2.0 + _zeros(X)}, 1)),
        du_dn=lambda Y: -np.ones(np.shape(Y)[:-1]),
        laplacian_rule=rule,
    )
    sine = ManufacturedSolution(
        "sine",
        AmbientField(lambda X: np.sin(pi * _c(X, 0)),
                     lambda X: _stack(pi * np.cos(pi * _c(X, 0))),
                     lambda X: _hess(X, {(0, 0): -pi * pi * np.sin(pi * _c(X, 0))}, 1)),
        du_dn=lambda Y: -pi * np.ones(np.shape(Y)[:-1]),
        laplacian_rule=rule,
    )
    return ManifoldCase("interval", 1, 1, chart, bchart, reach_proxy=0.5, max_delta=0.1,
                        analytic_volume=1.0, analytic_boundary_measure=2.0,
                        solutions={"quadratic": quad, "sine": sine}, rate_solution="sine",
                        probe_center=(0.3,))


def _half_circle_arc() -> ManifoldCase:
    chart = CircleArcChart(0.0, math.pi, name="half_circle")
    bchart = PointBoundary(chart, [0.0, math.pi])
    rule = sphere_laplacian(1)
    # sin θ is the second coordinate on the unit circle
    sin1 = ManufacturedSolution(
        "sin_theta",
        AmbientField(lambda X: _c(X, 1),
                     lambda X: _stack(_zeros(X), 1.0 + _zeros(X)),
                     lambda X: _hess(X, {}, 2)),
        du_dn=lambda Y: -np.ones(np.shape(Y)[:-1]),
        laplacian_rule=rule,
    )
    # sin 2θ = 2 x₁ x₂
    sin2 = ManufacturedSolution(
        "sin_2theta",
        AmbientField(lambda X: 2 * _c(X, 0) * _c(X, 1),
                     lambda X: _stack(2 * _c(X, 1), 2 * _c(X, 0)),
                     lambda X: _hess(X, {(0, 1): 2.0 + _zeros(X)}, 2)),
        du_dn=lambda Y: -2.0 * _c(Y, 0),
        laplacian_rule=rule,
    )
    return ManifoldCase("half_circle_arc", 1, 2, chart, bchart, reach_proxy=1.0, max_delta=0.1,
                        analytic_volume=math.pi, analytic_boundary_measure=2.0,
                        solutions={"sin_theta": sin1, "sin_2theta": sin2},
                        rate_solution="sin_2theta",
                        probe_center=(math.cos(1.0), math.sin(1.0)))


def _unit_disk() -> ManifoldCase:
    chart = IdentityChart(Disk(1.0), name="disk_cartesian")
    bchart = CircleBoundary(chart, 1.0, name="unit_circle")
    rule = flat_laplacian

    def r2(X):
        return _c(X, 0) ** 2 + _c(X, 1) ** 2

    para = ManufacturedSolution(
        "paraboloid",
        AmbientField(lambda X: 1 - r2(X),
                     lambda X: _stack(-2 * _c(X, 0), -2 * _c(X, 1)),
                     lambda X: _hess(X, {(0, 0): -2.0 + _zeros(X), (1, 1): -2.0 + _zeros(X)}, 2)),
        du_dn=lambda Y: -2.0 * np.ones(np.shape(Y)[:-1]),
        laplacian_rule=rule,
    )

    # (1 - r²)(1 + x₁/2)
    def t_val(X):
        return (1 - r2(X)) * (1 + 0.5 * _c(X, 0))

    def t_grad(X):
        x, y = _c(X, 0), _c(X, 1)
        a, b = 1 - r2(X), 1 + 0.5 * x
        return _stack(-2 * x * b + 0.5 * a, -2 * y * b)

    def t_hess(X):
        x, y = _c(X, 0), _c(X, 1)
        b = 1 + 0.5 * x
        return _hess(X, {(0, 0): -2 * b - 2 * x, (0, 1): -y, (1, 1): -2 * b}, 2)

    tilted = ManufacturedSolution(
        "tilted", AmbientField(t_val, t_grad, t_hess),
        du_dn=lambda Y: -2.0 - _c(Y, 0), laplacian_rule=rule,
    )

    # (1 - r²) exp(x₁/2): every derivative order is nonzero
    def e_val(X):
        return (1 - r2(X)) * np.exp(0.5 * _c(X, 0))

    def e_grad(X):
        x, y = _c(X, 0), _c(X, 1)
        a, e = 1 - r2(X), np.exp(0.5 * x)
        return _stack(e * (-2 * x + 0.5 * a), -2 * y * e)

    def e_hess(X):
        x, y = _c(X, 0), _c(X, 1)
        a, e = 1 - r2(X), np.exp(0.5 * x)
        return _hess(X, {(0, 0): e * (-2 - 2 * x + 0.25 * a), (0, 1): -y * e, (1, 1): -2 * e}, 2)

    expo = ManufacturedSolution(
        "exp_modulated", AmbientField(e_val, e_grad, e_hess),
        du_dn=lambda Y: -2.0 * np.exp(0.5 * _c(Y, 0)), laplacian_rule=rule,
    )
    return ManifoldCase("unit_disk", 2, 2, chart, bchart, reach_proxy=1.0, max_delta=0.2,
                        analytic_volume=math.pi, analytic_boundary_measure=2 * math.pi,
                        solutions={"paraboloid": para, "tilted": tilted, "exp_modulated": expo},
                        rate_solution="exp_modulated", probe_center=(0.3, 0.2))


def _hemisphere() -> ManifoldCase:
    chart = SphericalChart(math.pi / 2, name="spherical_upper")
    bchart = CircleBoundary(chart, 1.0, e1=[1.0, 0.0, 0.0], e2=[0.0, 1.0, 0.0], name="equator")
    rule = sphere_laplacian(2)

    height = ManufacturedSolution(
        "height",
        AmbientField(lambda X: _c(X, 2),
                     lambda X: _stack(_zeros(X), _zeros(X), 1.0 + _zeros(X)),
                     lambda X: _hess(X, {}, 3)),
        du_dn=lambda Y: -np.ones(np.shape(Y)[:-1]),
        laplacian_rule=rule,
    )
    # z (1 + x/2)
    tilted = ManufacturedSolution(
        "tilted",
        AmbientField(lambda X: _c(X, 2) * (1 + 0.5 * _c(X, 0)),
                     lambda X: _stack(0.5 * _c(X, 2), _zeros(X), 1 + 0.5 * _c(X, 0)),
                     lambda X: _hess(X, {(0, 2): 0.5 + _zeros(X)}, 3)),
        du_dn=lambda Y: -(1 + 0.5 * _c(Y, 0)),
        laplacian_rule=rule,
    )

    # z exp(x/2)
    def e_grad(X):
        e = np.exp(0.5 * _c(X, 0))
        return _stack(0.5 * _c(X, 2) * e, _zeros(X), e)

    def e_hess(X):
        e = np.exp(0.5 * _c(X, 0))
        return _hess(X, {(0, 0): 0.25 * _c(X, 2) * e, (0, 2): 0.5 * e}, 3)

    expo = ManufacturedSolution(
        "exp_modulated",
        AmbientField(lambda X: _c(X, 2) * np.exp(0.5 * _c(X, 0)), e_grad, e_hess),
        du_dn=lambda Y: -np.exp(0.5 * _c(Y, 0)),
        laplacian_rule=rule,
    )
    return ManifoldCase("hemisphere", 2, 3, chart, bchart, reach_proxy=1.0, max_delta=0.1,
                        analytic_volume=2 * math.pi, analytic_boundary_measure=2 * math.pi,
                        solutions={"height": height, "tilted": tilted, "exp_modulated": expo},
                        rate_solution="exp_modulated",
                        probe_center=tuple(chart.map(np.array([0.8, 1.0]))),
                        notes="spherical chart is singular at the pole; quadrature uses "
                              "polar rings there and never evaluates the metric at θ₁ = 0")


_BUILDERS = {
    "interval": _interval,
    "half_circle_arc": _half_circle_arc,
    "unit_disk": _unit_disk,
    "hemisphere": _hemisphere,
}

CASE_IDS = tuple(_BUILDERS)

_cache: dict[str, ManifoldCase] = {}


def get_case(case_id: str) -> ManifoldCase:
    if case_id not in _BUILDERS:
        raise UnknownCaseError(f"unknown case {case_id!r}; known cases: {', '.join(CASE_IDS)}")
    if case_id not in _cache:
        _cache[case_id] = _BUILDERS[case_id]()
    return _cache[case_id]


def fd_laplace_oracle(chart: Chart, u: Callable, theta, step: float = 1e-3) -> float:
    """Δ_M u at φ(θ) by central differences of the divergence form.

    Differentiates ``√det G · g^{ij} ∂_j(u∘φ)`` numerically; only the chart map
    and its Jacobian are used.
    """
    theta = np.asarray(theta, dtype=float)
    m = chart.m
    for i in range(m):
        for sgn in (-2, 2):
            probe = theta.copy()
            probe[i] += sgn * step
            if not chart.domain.contains(probe, tol=0.0):
                raise DomainError("insufficient margin for the finite-difference stencil")

    def U(t):
        return float(u(chart.map(t)))

    def flux(t):
        md = metric_at(chart, t)
        du = np.empty(m)
        for j in range(m):
            e = np.zeros(m)
            e[j] = step
            du[j] = (U(t + e) - U(t - e)) / (2 * step)
        return md.sqrt_det_G * (md.G_inv @ du)

    div = 0.0
    for i in range(m):
        e = np.zeros(m)
        e[i] = step
        div += (flux(theta + e)[i] - flux(theta - e)[i]) / (2 * step)
    return div / metric_at(chart, theta).sqrt_det_G
