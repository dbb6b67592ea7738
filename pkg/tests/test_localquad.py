import math

import numpy as np
import pytest
from scipy import integrate

from nonlocal_manifold.catalog import get_case
from nonlocal_manifold.kernels import COSINE
from nonlocal_manifold.localquad import LocalQuadrature

DELTA = 0.1


def _K(level, delta, m):
    C = (4 * math.pi * delta**2) ** (-m / 2)
    return lambda sq: C * float(COSINE.eval(level, min(sq / (4 * delta**2), 1.0)))


def _rule_sum(q, x, g, level):
    v = q.volume(np.atleast_2d(x))
    return float(np.sum(g(v.Y[0]) * q.kernel(level, v.sq[0]) * v.W[0]))


def _disk_oracle(x, g, level, delta):
    """Polar about x with the ray clipped at the unit circle, adaptive quadrature."""
    K = _K(level, delta, 2)
    px, py = x

    def exit_radius(a):
        c, s = math.cos(a), math.sin(a)
        b = px * c + py * s
        return min(2 * delta, -b + math.sqrt(b * b + 1 - px * px - py * py))

    def inner(t, a):
        y = np.array([px + t * math.cos(a), py + t * math.sin(a)])
        return g(y[None])[0] * K(t * t) * t

    return integrate.dblquad(inner, 0, 2 * math.pi, 0, exit_radius, epsabs=1e-12, epsrel=1e-10)[0]


def test_clear_flags():
    q = LocalQuadrature(get_case("unit_disk"), DELTA)
    flags = q.clear(np.array([[0.0, 0.0], [0.79, 0.0], [0.81, 0.0], [1.0, 0.0]]))
    assert flags.tolist() == [True, True, False, False]


@pytest.mark.parametrize("level,moment", [(0, 0.5), (1, 0.25 - 1 / math.pi**2)])
def test_disk_interior_moments(level, moment):
    q = LocalQuadrature(get_case("unit_disk"), DELTA)
    val = _rule_sum(q, np.array([0.2, -0.3]), lambda Y: np.ones(len(Y)), level)
    assert val == pytest.approx(moment, rel=1e-9)


@pytest.mark.parametrize("x", [(0.85, 0.0), (0.0, 0.95), (0.6, 0.7), (1.0, 0.0)])
@pytest.mark.parametrize("level", [0, 1, 2])
def test_disk_layer_against_adaptive_oracle(x, level):
    x = np.array(x)
    x = x / max(1.0, np.linalg.norm(x))
    g = lambda Y: np.exp(Y[:, 0]) * (1 + Y[:, 1] ** 2)
    q = LocalQuadrature(get_case("unit_disk"), DELTA)
    val = _rule_sum(q, x, g, level)
    assert val == pytest.approx(_disk_oracle(x, g, level, DELTA), rel=1e-6)


def test_sphere_interior_cap():
    q = LocalQuadrature(get_case("hemisphere"), DELTA)
    x = np.array([math.sin(0.5), 0.0, math.cos(0.5)])
    K = _K(0, DELTA, 2)
    gmax = 2 * math.asin(DELTA)  # chord 2δ
    oracle = 2 * math.pi * integrate.quad(lambda gm: K(2 - 2 * math.cos(gm)) * math.sin(gm), 0, gmax,
                                          epsabs=1e-13)[0]
    val = _rule_sum(q, x, lambda Y: np.ones(len(Y)), 0)
    assert val == pytest.approx(oracle, rel=1e-9)


@pytest.mark.parametrize("t1", [math.pi / 2, math.pi / 2 - 0.08])
def test_sphere_near_equator(t1):
    q = LocalQuadrature(get_case("hemisphere"), DELTA)
    x = np.array([math.sin(t1), 0.0, math.cos(t1)])
    K = _K(1, DELTA, 2)
    g = lambda Y: 1 + Y[:, 0] * Y[:, 2]

    def integrand(b, a):  # a = polar angle, b = azimuth
        y = np.array([math.sin(a) * math.cos(b), math.sin(a) * math.sin(b), math.cos(a)])
        sq = float(np.sum((y - x) ** 2))
        return g(y[None])[0] * K(sq) * math.sin(a) if sq < 4 * DELTA**2 else 0.0

    span = 0.25
    oracle = integrate.dblquad(integrand, t1 - span, math.pi / 2, -span, span,
                               epsabs=1e-11, epsrel=1e-9)[0]
    assert _rule_sum(q, x, g, 1) == pytest.approx(oracle, rel=1e-5)


@pytest.mark.parametrize("x0", [0.5, 0.12, 0.0])
def test_interval_volume(x0):
    q = LocalQuadrature(get_case("interval"), DELTA)
    K = _K(0, DELTA, 1)
    lo, hi = max(0.0, x0 - 2 * DELTA), min(1.0, x0 + 2 * DELTA)
    oracle = integrate.quad(lambda y: y**2 * K((y - x0) ** 2), lo, hi, points=[x0], epsabs=1e-14)[0]
    assert _rule_sum(q, np.array([x0]), lambda Y: Y[:, 0] ** 2, 0) == pytest.approx(oracle, rel=1e-10)


def test_arc_volume_uses_arclength():
    q = LocalQuadrature(get_case("half_circle_arc"), DELTA)
    K = _K(1, DELTA, 1)
    t0 = 0.05
    x = np.array([math.cos(t0), math.sin(t0)])
    oracle = integrate.quad(lambda t: K(2 - 2 * math.cos(t - t0)), 0, t0 + 2 * math.asin(DELTA),
                            points=[t0], epsabs=1e-14)[0]
    assert _rule_sum(q, x, lambda Y: np.ones(len(Y)), 1) == pytest.approx(oracle, rel=1e-10)


@pytest.mark.parametrize("x", [(0.9, 0.0), (1.0, 0.0), (0.3, 0.3)])
def test_circle_boundary_rule(x):
    x = np.array(x)
    q = LocalQuadrature(get_case("unit_disk"), DELTA)
    b = q.boundary(x)
    val = float(np.sum(q.kernel(2, b.sq[0]) * b.W[0]))
    K = _K(2, DELTA, 2)
    a0 = math.atan2(x[1], x[0])
    oracle = integrate.quad(lambda a: K((math.cos(a) - x[0]) ** 2 + (math.sin(a) - x[1]) ** 2),
                            a0 - 0.5, a0 + 0.5, epsabs=1e-13, limit=200)[0]
    assert val == pytest.approx(oracle, rel=1e-8, abs=1e-14)


def test_point_boundary_rule():
    q = LocalQuadrature(get_case("interval"), DELTA)
    b = q.boundary(np.array([[0.05]]))
    assert b.W.tolist() == [[1.0, 1.0]]
    assert np.allclose(b.sq[0], [0.05**2, 0.95**2])
