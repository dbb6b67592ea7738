"""Target-centred polar quadrature for horizon-ball integrals.

Integrals of the form ∫_M g(y) k(|x − y|²/4δ²) dμ_y are taken in polar
coordinates about the target x: a direction α (or a side ±1 when m = 1) and a
radius t.  As a function of t the kernel is smooth right up to the support
edge, so Gauss–Legendre in t converges spectrally; lattice sums instead carry
an error set by the kink of the kernel at r = 1, which the δ⁻² in L_δ then
amplifies.  Where the horizon ball meets ∂M the angular range is split at the
directions in which the ray leaves M exactly at the support edge, with
geometric grading toward that split.

Boundary integrals over ∂M are Gauss rules on the arc of ∂M inside the ball.

These rules need analytic fields (the manufactured u and f), so they serve the
truncation-residual study; the cloud operators remain the discretisation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (
    CircleArcChart,
    CircleBoundary,
    Disk,
    IdentityChart,
    Interval,
    PointBoundary,
    SphericalChart,
    boundary_geometry,
    conormal,
)
from .kernels import COSINE, KernelProfile, normalization

# ---------------------------------------------------------------------------
# polar patches: rays leaving a target along the manifold


class _Patch:
    m: int

    def support(self, delta: float) -> float:
        """Ray length at which |x − y| = 2δ."""
        raise NotImplementedError

    def points(self, X, D, t):
        raise NotImplementedError

    def jac(self, t):
        raise NotImplementedError

    def sq(self, t):
        raise NotImplementedError

    def exit(self, X, D):
        """Ray length at which the ray from X along D leaves M (0 if at once)."""
        raise NotImplementedError


class _FlatLine(_Patch):
    m = 1

    def __init__(self, lo, hi):
        self.lo, self.hi = lo, hi

    def support(self, delta):
        return 2.0 * delta

    def points(self, X, D, t):
        return X[:, None, None, :] + t[..., None] * D[:, :, None, None]

    def jac(self, t):
        return np.ones_like(t)

    def sq(self, t):
        return t * t

    def exit(self, X, D):
        x = X[:, :1]
        return np.maximum(np.where(D > 0, self.hi - x, x - self.lo), 0.0)


class _Arc(_Patch):
    m = 1

    def __init__(self, chart: CircleArcChart):
        self.r = chart.radius
        self.lo, self.hi = chart.domain.lo, chart.domain.hi

    def _angle(self, X):
        t = np.arctan2(X[:, 1], X[:, 0])
        t = self.lo + (t - self.lo) % (2 * math.pi)
        return np.where((t > self.hi + 1e-9) & (t - 2 * math.pi >= self.lo - 1e-9),
                        t - 2 * math.pi, t)

    def support(self, delta):
        return 2.0 * self.r * math.asin(min(delta / self.r, 1.0))

    def points(self, X, D, t):
        a = self._angle(X)[:, None, None] + D[:, :, None] * t / self.r
        return self.r * np.stack([np.cos(a), np.sin(a)], axis=-1)

    def jac(self, t):
        return np.ones_like(t)

    def sq(self, t):
        s = np.sin(t / (2.0 * self.r))
        return 4.0 * self.r**2 * s * s

    def exit(self, X, D):
        a = self._angle(X)[:, None]
        return np.maximum(np.where(D > 0, self.hi - a, a - self.lo), 0.0) * self.r


class _FlatDisk(_Patch):
    m = 2

    def __init__(self, radius):
        self.R = radius

    def frame(self, X):
        n = len(X)
        return np.tile([1.0, 0.0], (n, 1)), np.tile([0.0, 1.0], (n, 1))

    def outward(self, X, E1, E2):
        return np.arctan2(np.einsum("nd,nd->n", X, E2), np.einsum("nd,nd->n", X, E1))

    def support(self, delta):
        return 2.0 * delta

    def points(self, X, D, t):
        return X[:, None, None, :] + t[..., None] * D[:, :, None, :]

    def jac(self, t):
        return t

    def sq(self, t):
        return t * t

    def exit(self, X, D):
        b = np.einsum("nd,nad->na", X, D)
        c = np.minimum(np.einsum("nd,nd->n", X, X) - self.R**2, 0.0)[:, None]
        return np.maximum(-b + np.sqrt(b * b - c), 0.0)


class _SphereCap(_Patch):
    """Geodesic polar coordinates on the unit sphere, cap z ≥ cos θ_max."""

    m = 2

    def __init__(self, theta_max):
        self.c = math.cos(theta_max)

    def frame(self, X):
        z = np.array([0.0, 0.0, 1.0])
        up = z[None, :] - X[:, 2:3] * X
        nrm = np.linalg.norm(up, axis=1)
        fallback = np.array([1.0, 0.0, 0.0])[None, :] - X[:, :1] * X
        up = np.where(nrm[:, None] > 1e-8, up, fallback)
        E1 = up / np.linalg.norm(up, axis=1)[:, None]
        E2 = np.cross(X, E1)
        return E1, E2

    def outward(self, X, E1, E2):
        return np.arctan2(-E2[:, 2], -E1[:, 2])

    def support(self, delta):
        return 2.0 * math.asin(min(delta, 1.0))

    def points(self, X, D, t):
        return (np.cos(t)[..., None] * X[:, None, None, :]
                + np.sin(t)[..., None] * D[:, :, None, :])

    def jac(self, t):
        return np.sin(t)

    def sq(self, t):
        s = np.sin(0.5 * t)
        return 4.0 * s * s

    def exit(self, X, D):
        xz = np.broadcast_to(X[:, 2:3], D.shape[:2])
        ez = D[..., 2]
        A = np.hypot(xz, ez)
        safe = np.where(A > 1e-14, A, 1.0)
        t = np.arctan2(ez, xz) + np.arccos(np.clip(self.c / safe, -1.0, 1.0))
        return np.where(A > 1e-14, np.maximum(t, 0.0), 0.0)


def polar_patch(chart):
    dom = chart.domain
    if isinstance(chart, IdentityChart) and isinstance(dom, Interval):
        return _FlatLine(dom.lo, dom.hi)
    if isinstance(chart, CircleArcChart):
        return _Arc(chart)
    if isinstance(chart, IdentityChart) and isinstance(dom, Disk):
        return _FlatDisk(dom.radius)
    if isinstance(chart, SphericalChart):
        return _SphereCap(dom.theta_max)
    raise TypeError(f"no polar patch for chart {type(chart).__name__}")


# ---------------------------------------------------------------------------
# boundary data at arbitrary ω


class _PeriodicField:
    """Trigonometric interpolant of a smooth periodic vector function of ω."""

    def __init__(self, samples: np.ndarray, tol: float = 1e-11):
        n = len(samples)
        coef = np.fft.rfft(samples, axis=0) / n
        coef[1:] *= 2.0
        if n % 2 == 0:
            coef[-1] /= 2.0
        mag = np.abs(coef).max(axis=1) if coef.ndim > 1 else np.abs(coef)
        keep = np.nonzero(mag > tol * max(mag.max(), 1e-300))[0]
        self.k = keep
        self.coef = coef[keep]

    def __call__(self, omega):
        om = np.asarray(omega, dtype=float)
        ph = np.exp(1j * om[..., None] * self.k)
        out = np.tensordot(ph, self.coef, axes=([-1], [0]))
        return out.real


@dataclass
class BoundaryData:
    """Co-normal and κ_n as functions of ω."""

    normal: object
    kappa: object

    @classmethod
    def build(cls, bchart, n: int = 128) -> "BoundaryData":
        if isinstance(bchart, PointBoundary):
            normals = np.array([conormal(bchart, o) for o in bchart.labels])
            kap = np.array([boundary_geometry(bchart, o).kappa_n for o in bchart.labels])
            return cls(lambda o: normals[np.asarray(o, dtype=int)],
                       lambda o: kap[np.asarray(o, dtype=int)])
        om = 2 * math.pi * np.arange(n) / n
        normals = np.array([conormal(bchart, o) for o in om])
        kap = np.array([boundary_geometry(bchart, o).kappa_n for o in om])
        return cls(_PeriodicField(normals), _PeriodicField(kap))


# ---------------------------------------------------------------------------
# rules


@dataclass
class VolumeRule:
    """Nodes Y (n, k, d), weights W (n, k) and squared distances |x − y|² (n, k)."""

    Y: np.ndarray
    W: np.ndarray
    sq: np.ndarray


@dataclass
class BoundaryRule:
    Y: np.ndarray
    W: np.ndarray
    sq: np.ndarray
    omega: np.ndarray


def _bisect(pred, lo, hi, iters: int = 60):
    """Smallest φ in [lo, hi] with pred true, for pred monotone (false→true)."""
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        p = pred(mid)
        hi = np.where(p, mid, hi)
        lo = np.where(p, lo, mid)
    return hi


class LocalQuadrature:
    """Polar rules about arbitrary targets on a catalog case.

    ``n_radial`` Gauss points per ray; ``n_angle`` equispaced directions when
    the ball misses ∂M; otherwise ``n_arc`` Gauss points on each of
    ``grading + 1`` geometrically graded pieces per side plus ``n_far`` on
    the unobstructed part; ``n_boundary`` Gauss points on the boundary arc.
    """

    def __init__(self, case, delta: float, profile: KernelProfile = COSINE,
                 n_radial: int = 10, n_angle: int = 16, n_arc: int = 6,
                 grading: int = 7, n_far: int = 12, n_boundary: int = 24):
        if delta <= 0:
            raise ValueError("delta must be positive")
        self.case = case
        self.delta = float(delta)
        self.profile = profile
        self.patch = polar_patch(case.chart)
        self.bchart = case.boundary_chart
        self.m = case.m
        self.t_s = self.patch.support(self.delta)
        self.norm = normalization(self.delta, self.m)
        self.n_radial = n_radial
        self.n_angle = n_angle
        self.n_arc = n_arc
        self.grading = grading
        self.n_far = n_far
        self.n_boundary = n_boundary
        self._bdata = None

    @property
    def boundary_data(self) -> BoundaryData:
        if self._bdata is None:
            self._bdata = BoundaryData.build(self.bchart)
        return self._bdata

    def kernel(self, level, sq):
        r = sq / (4.0 * self.delta**2)
        return self.norm * np.where(r <= 1.0, self.profile.eval(level, np.minimum(r, 1.0)), 0.0)

    # -- volume --------------------------------------------------------------

    def _radial(self, X, D, aw, T):
        """Gauss rule on [0, T] along each direction; aw are direction weights."""
        g, gw = np.polynomial.legendre.leggauss(self.n_radial)
        t = 0.5 * T[..., None] * (g + 1.0)  # (n, a, r)
        w = aw[..., None] * 0.5 * T[..., None] * gw * self.patch.jac(t)
        n = len(X)
        Y = self.patch.points(X, D, t).reshape(n, -1, X.shape[1])
        return VolumeRule(Y, w.reshape(n, -1), self.patch.sq(t).reshape(n, -1))

    def clear(self, X) -> np.ndarray:
        """True where the horizon ball about X stays inside M."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.m == 1:
            D = np.tile([1.0, -1.0], (len(X), 1))
            return np.all(self.patch.exit(X, D) >= self.t_s, axis=1)
        E1, E2 = self.patch.frame(X)
        a0 = self.patch.outward(X, E1, E2)
        return self._exit_at(X, E1, E2, a0) >= self.t_s

    def volume(self, X) -> VolumeRule:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if self.m == 1:
            D = np.tile([1.0, -1.0], (len(X), 1))
            T = np.minimum(self.patch.exit(X, D), self.t_s)
            return self._radial(X, D, np.ones_like(D), T)
        return self._volume2(X)

    def _directions(self, E1, E2, alpha):
        return np.cos(alpha)[..., None] * E1[:, None, :] + np.sin(alpha)[..., None] * E2[:, None, :]

    def _exit_at(self, X, E1, E2, alpha):
        return self.patch.exit(X, self._directions(E1, E2, alpha[:, None]))[:, 0]

    def _volume2(self, X) -> VolumeRule:
        p = self.patch
        E1, E2 = p.frame(X)
        a0 = p.outward(X, E1, E2)
        t0 = self._exit_at(X, E1, E2, a0)
        clear = t0 >= self.t_s
        n = len(X)
        rules = [None, None]
        if clear.any():
            idx = np.nonzero(clear)[0]
            k = np.arange(self.n_angle)
            alpha = a0[idx, None] + 2.0 * math.pi * k / self.n_angle
            D = self._directions(E1[idx], E2[idx], alpha)
            aw = np.full(alpha.shape, 2.0 * math.pi / self.n_angle)
            rules[0] = (idx, self._radial(X[idx], D, aw, np.full(alpha.shape, self.t_s)))
        if (~clear).any():
            idx = np.nonzero(~clear)[0]
            rules[1] = (idx, self._layer_rule(X[idx], E1[idx], E2[idx], a0[idx], t0[idx]))
        k = max(r[1].W.shape[1] for r in rules if r is not None)
        Y = np.zeros((n, k, X.shape[1]))
        W = np.zeros((n, k))
        sq = np.full((n, k), 4.0 * self.delta**2 * 2.0)
        for r in rules:
            if r is None:
                continue
            idx, rule = r
            kk = rule.W.shape[1]
            Y[idx, :kk] = rule.Y
            W[idx, :kk] = rule.W
            sq[idx, :kk] = rule.sq
        return VolumeRule(Y, W, sq)

    def _layer_rule(self, X, E1, E2, a0, t0):
        g, gw = np.polynomial.legendre.leggauss(self.n_arc)
        gf, gfw = np.polynomial.legendre.leggauss(self.n_far)
        n = len(X)
        alphas, weights, Ts = [], [], []
        for side in (1.0, -1.0):
            def exit_phi(phi, side=side):
                return self._exit_at(X, E1, E2, a0 + side * phi)

            lo = np.zeros(n)
            hi = np.full(n, math.pi)
            tan = np.where(t0 > 0, 0.0, _bisect(lambda ph: exit_phi(ph) > 0, lo, hi))
            reach = exit_phi(hi) >= self.t_s
            cross = np.where(reach, _bisect(lambda ph: exit_phi(ph) >= self.t_s, tan, hi), math.pi)
            # graded pieces on [tan, cross], refined toward cross
            L = cross - tan
            edges = [tan] + [cross - L * 2.0**-j for j in range(1, self.grading + 1)] + [cross]
            for a, b in zip(edges[:-1], edges[1:]):
                phi = 0.5 * (a + b)[:, None] + 0.5 * (b - a)[:, None] * g
                alphas.append(a0[:, None] + side * phi)
                weights.append(0.5 * (b - a)[:, None] * gw)
                Ts.append(None)
            # unobstructed part [cross, π]
            phi = 0.5 * (cross + math.pi)[:, None] + 0.5 * (math.pi - cross)[:, None] * gf
            alphas.append(a0[:, None] + side * phi)
            weights.append(0.5 * (math.pi - cross)[:, None] * gfw)
            Ts.append(self.t_s)
        alpha = np.concatenate(alphas, axis=1)
        aw = np.concatenate(weights, axis=1)
        D = self._directions(E1, E2, alpha)
        # on unobstructed pieces the ray never leaves within the support
        fixed = np.concatenate([np.full(w.shape, t is not None) for w, t in zip(weights, Ts)], axis=1)
        T = np.where(fixed, self.t_s, np.minimum(self.patch.exit(X, D), self.t_s))
        return self._radial(X, D, aw, T)

    # -- boundary ------------------------------------------------------------

    def boundary(self, X) -> BoundaryRule:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        b = self.bchart
        n = len(X)
        if isinstance(b, PointBoundary):
            labels = np.array(b.labels)
            P = np.array([b.map(o) for o in labels]).reshape(len(labels), -1)
            Y = np.broadcast_to(P, (n,) + P.shape).copy()
            sq = np.sum((X[:, None, :] - Y) ** 2, axis=-1)
            return BoundaryRule(Y, np.ones((n, len(labels))), sq,
                                np.broadcast_to(labels, (n, len(labels))).copy())
        if not isinstance(b, CircleBoundary):
            raise TypeError(f"no boundary rule for {type(b).__name__}")
        p = X - b.center
        B1, B2 = p @ b.e1, p @ b.e2
        B = np.hypot(B1, B2)
        w0 = np.arctan2(B2, B1)
        A = np.sum(p * p, axis=1) + b.radius**2
        with np.errstate(divide="ignore", invalid="ignore"):
            gam = (A - 4.0 * self.delta**2) / (2.0 * b.radius * B)
        gam = np.where(B > 0, gam, np.where(A <= 4.0 * self.delta**2, -1.0, 2.0))
        beta = np.where(gam > 1.0, 0.0, np.arccos(np.clip(gam, -1.0, 1.0)))
        g, gw = np.polynomial.legendre.leggauss(self.n_boundary)
        omega = w0[:, None] + beta[:, None] * g
        W = beta[:, None] * gw * b.radius
        Y = (b.center + b.radius * (np.cos(omega)[..., None] * b.e1 + np.sin(omega)[..., None] * b.e2))
        sq = np.sum((X[:, None, :] - Y) ** 2, axis=-1)
        return BoundaryRule(Y, W, sq, omega)
