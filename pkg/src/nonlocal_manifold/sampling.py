"""Quadrature clouds on M and ∂M.

Two node layouts are available:

``gauss`` (default)
    Boundary-fitted composite Gauss–Legendre.  Intervals get panels of
    ``order`` Gauss points; disk-like parameter domains get polar rings with
    Gauss nodes in the radius and equispaced nodes around each ring, the ring
    count chosen so that the spacing along the ring is about ``h``.  The
    boundary of Ω coincides with panel edges, so no cell is ever clipped.

``midpoint``
    Uniform parameter grid with the midpoint rule; cells straddling ∂Ω are
    clipped by sub-sampling each cell into 4^m sub-cells.

Boundary nodes are the endpoints (m = 1) or an equispaced trapezoid rule on
the boundary circle (m = 2).
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from .geometry import (
    CircleBoundary,
    Disk,
    Interval,
    PointBoundary,
    PolarCap,
    boundary_geometry,
    conormal,
)


class ResolutionError(ValueError):
    pass


@dataclass
class QuadratureCloud:
    case_id: str
    spacing: float
    scheme: str
    m: int
    X: np.ndarray  # interior node coordinates (N, d)
    theta: np.ndarray  # parameters (N, m)
    w: np.ndarray  # volume weights (N,)
    Y: np.ndarray  # boundary node coordinates (Nb, d)
    omega: np.ndarray  # boundary parameters (Nb,) — labels for m = 1
    s: np.ndarray  # boundary weights (Nb,)
    normal: np.ndarray  # outward co-normals (Nb, d)
    kappa: np.ndarray  # κ_n at boundary nodes (Nb,)
    _tree: cKDTree | None = field(default=None, repr=False, compare=False)

    @property
    def n_interior(self) -> int:
        return len(self.w)

    @property
    def n_boundary(self) -> int:
        return len(self.s)

    @property
    def d(self) -> int:
        return self.X.shape[1]

    def boundary_tree(self) -> cKDTree:
        if self._tree is None:
            if self.n_boundary == 0:
                raise ValueError("cloud has no boundary nodes")
            self._tree = cKDTree(self.Y)
        return self._tree

    def boundary_distance(self, x=None) -> np.ndarray:
        """Distance to the nearest boundary node (all interior nodes when x is None)."""
        pts = self.X if x is None else np.atleast_2d(np.asarray(x, dtype=float))
        dist, _ = self.boundary_tree().query(pts)
        return dist

    def to_csv(self, path) -> None:
        d, m = self.d, self.m
        header = (["node_kind"] + [f"param{i}" for i in range(m)] + [f"x{i}" for i in range(d)]
                  + ["weight"] + [f"n{i}" for i in range(d)] + ["kappa_n"])
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(header)
            blank = [""] * d

            def num(values):
                return [repr(float(v)) for v in np.ravel(values)]

            for th, x, w in zip(self.theta, self.X, self.w):
                out.writerow(["interior", *num(th), *num(x), *num(w), *blank, ""])
            bparams = np.asarray(self.omega, dtype=float).reshape(self.n_boundary, -1)
            for om, y, s, n, k in zip(bparams, self.Y, self.s, self.normal, self.kappa):
                prow = num(om)[: max(m - 1, 1)]
                prow += [""] * (m - len(prow))
                out.writerow(["boundary", *prow, *num(y), *num(s), *num(n), *num(k)])


def integrate_interior(cloud: QuadratureCloud, f) -> float:
    f = np.asarray(f, dtype=float)
    if f.shape != cloud.w.shape:
        raise ValueError(f"expected {cloud.n_interior} node values, got {f.shape}")
    return float(np.dot(f, cloud.w))


def integrate_boundary(cloud: QuadratureCloud, g) -> float:
    g = np.asarray(g, dtype=float)
    if g.shape != cloud.s.shape:
        raise ValueError(f"expected {cloud.n_boundary} boundary values, got {g.shape}")
    return float(np.dot(g, cloud.s))


def boundary_distance(cloud: QuadratureCloud, x) -> float | np.ndarray:
    out = cloud.boundary_distance(x)
    return float(out[0]) if np.ndim(x) == 1 else out


# ---------------------------------------------------------------------------
# one-dimensional rules


def _gauss_panels(lo: float, hi: float, h: float, order: int):
    n_panels = max(1, math.ceil((hi - lo) / (order * h) - 1e-9))
    g, gw = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, n_panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[:-1] + edges[1:])
    nodes = (mid[:, None] + half[:, None] * g[None, :]).ravel()
    weights = (half[:, None] * gw[None, :]).ravel()
    return nodes, weights


def _midpoint_cells(lo: float, hi: float, h: float):
    n = max(1, math.ceil((hi - lo) / h - 1e-9))
    edges = np.linspace(lo, hi, n + 1)
    return 0.5 * (edges[:-1] + edges[1:]), np.diff(edges)


# ---------------------------------------------------------------------------
# parameter-space rules per domain type: (theta (N, m), param_weight (N,))


def _rings(radius: float, h: float, order: int, ring_length):
    rho, wr = _gauss_panels(0.0, radius, h, order)
    thetas, weights = [], []
    for r, w in zip(rho, wr):
        n_phi = max(6, math.ceil(ring_length(r) / h - 1e-9))
        phi = 2.0 * math.pi * (np.arange(n_phi) + 0.5) / n_phi
        thetas.append(np.column_stack([np.full(n_phi, r), phi]))
        weights.append(np.full(n_phi, w * 2.0 * math.pi / n_phi))
    return np.concatenate(thetas), np.concatenate(weights)


def _param_rule(chart, h: float, scheme: str, order: int):
    dom = chart.domain
    if isinstance(dom, Interval):
        if scheme == "gauss":
            t, w = _gauss_panels(dom.lo, dom.hi, h, order)
        else:
            t, w = _midpoint_cells(dom.lo, dom.hi, h)
        return t[:, None], w
    if isinstance(dom, Disk):
        R = dom.radius
        if scheme == "gauss":
            polar, w = _rings(R, h, order, lambda r: 2.0 * math.pi * r)
            rho, phi = polar[:, 0], polar[:, 1]
            return np.column_stack([rho * np.cos(phi), rho * np.sin(phi)]), w * rho
        return _clipped_grid(R, h)
    if isinstance(dom, PolarCap):
        if scheme == "gauss":
            # ring length measured in the embedding: |∂φ/∂θ₂| · 2π
            def ring_length(t1):
                return 2.0 * math.pi * np.linalg.norm(chart.jacobian(np.array([t1, 0.0]))[:, 1])

            return _rings(dom.theta_max, h, order, ring_length)
        t1, w1 = _midpoint_cells(0.0, dom.theta_max, h)
        t2, w2 = _midpoint_cells(0.0, 2.0 * math.pi, h)
        T1, T2 = np.meshgrid(t1, t2, indexing="ij")
        return np.column_stack([T1.ravel(), T2.ravel()]), np.outer(w1, w2).ravel()
    raise TypeError(f"no quadrature rule for domain {type(dom).__name__}")


def _clipped_grid(R: float, h: float, sub: int = 4):
    """Midpoint grid on [-R, R]² clipped to the disk by sub×sub sub-cells per cell."""
    centers, widths = _midpoint_cells(-R, R, h)
    hh = widths[0]
    offs = (np.arange(sub) + 0.5) / sub - 0.5
    ox, oy = np.meshgrid(offs * hh, offs * hh, indexing="ij")
    ox, oy = ox.ravel(), oy.ravel()
    CX, CY = np.meshgrid(centers, centers, indexing="ij")
    cx, cy = CX.ravel(), CY.ravel()
    sx = cx[:, None] + ox[None, :]
    sy = cy[:, None] + oy[None, :]
    inside = sx**2 + sy**2 <= R * R
    frac = inside.mean(axis=1)
    keep = frac > 0
    full = frac == 1.0
    px = np.where(full, cx, np.sum(sx * inside, axis=1) / np.maximum(inside.sum(axis=1), 1))
    py = np.where(full, cy, np.sum(sy * inside, axis=1) / np.maximum(inside.sum(axis=1), 1))
    return np.column_stack([px[keep], py[keep]]), frac[keep] * hh * hh


def _boundary_rule(bchart, h: float):
    if isinstance(bchart, PointBoundary):
        labels = np.array(bchart.labels, dtype=float)
        return labels, np.ones(len(labels))
    if isinstance(bchart, CircleBoundary):
        length = bchart.measure()
        n = max(8, math.ceil(length / h - 1e-9))
        omega = 2.0 * math.pi * np.arange(n) / n
        return omega, np.full(n, length / n)
    raise TypeError(f"no boundary rule for {type(bchart).__name__}")


def sample_case(case, h: float, scheme: str = "gauss", order: int = 2) -> QuadratureCloud:
    """Interior and boundary quadrature nodes for a catalog case at spacing h."""
    if h <= 0:
        raise ResolutionError("h must be positive")
    if scheme not in ("gauss", "midpoint"):
        raise ValueError(f"unknown quadrature scheme {scheme!r}")
    chart, bchart = case.chart, case.boundary_chart
    dom = chart.domain
    if isinstance(dom, Interval):
        extents = [dom.hi - dom.lo]
    elif isinstance(dom, Disk):
        extents = [2 * dom.radius, 2 * dom.radius]
    else:
        extents = [dom.theta_max, 2 * math.pi]
    if min(extents) / h < 4:
        raise ResolutionError(f"h={h} leaves fewer than 4 cells across the parameter domain")

    theta, pw = _param_rule(chart, h, scheme, order)
    X = chart.map_many(theta)
    w = pw * chart.density_many(theta)

    omega, s = _boundary_rule(bchart, h)
    Y = np.array([bchart.map(o) for o in omega]).reshape(len(omega), chart.d)
    normal = np.array([conormal(bchart, o) for o in omega]).reshape(len(omega), chart.d)
    kappa = np.array([boundary_geometry(bchart, o).kappa_n for o in omega])
    return QuadratureCloud(case_id=case.case_id, spacing=h, scheme=scheme, m=chart.m,
                           X=X, theta=theta, w=w, Y=Y, omega=omega, s=s,
                           normal=normal, kappa=kappa)
