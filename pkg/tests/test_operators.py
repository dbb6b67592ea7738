import csv
import math

import numpy as np
import pytest
from scipy import integrate

from nonlocal_manifold.catalog import CASE_IDS, get_case
from nonlocal_manifold.kernels import COSINE
from nonlocal_manifold.operators import (MODES, AccuracyError, NonlocalOperators, apply_Q,
                                         assemble_system, tilde_R)
from nonlocal_manifold.sampling import sample_case
from oracles import double_loop_actions, max_rel_gap

# small clouds (at most ~200 interior nodes) and horizons for the double-loop reference
SMALL = {
    "interval": (0.01, 0.03),
    "half_circle_arc": (0.02, 0.06),
    "unit_disk": (0.16, 0.4),
    "hemisphere": (0.2, 0.45),
}


def _close(a, b, rel=1e-12):
    return max_rel_gap(a, b) <= rel


@pytest.mark.parametrize("cid", CASE_IDS)
@pytest.mark.parametrize("mode", MODES)
def test_blocks_match_double_loop(cid, mode):
    h, delta = SMALL[cid]
    case = get_case(cid)
    c = sample_case(case, h)
    assert c.n_interior <= 200
    rng = np.random.default_rng(7)
    u, f = rng.standard_normal(c.n_interior), rng.standard_normal(c.n_interior)
    v, fb = rng.standard_normal(c.n_boundary), rng.standard_normal(c.n_boundary)

    ref = double_loop_actions(c, delta, mode, u, v, f, fb)
    blk = assemble_system(c, delta, f, fb, mode=mode)
    assert _close(blk.A @ u, ref["L"])
    assert _close(blk.B @ v, ref["G"])
    assert _close(blk.rhs_in, ref["P"])
    assert _close(blk.D @ u, ref["D"])
    assert _close(blk.r_tilde, ref["Rt"])
    assert _close(blk.rhs_bd, ref["Q"])

    ops = NonlocalOperators(c, delta, mode=mode)
    assert _close(ops.apply_L(u), ref["L"])
    assert _close(ops.apply_G(v), ref["G"])
    assert _close(ops.apply_D(u), ref["D"])


@pytest.mark.parametrize("mode", MODES)
def test_invariants(mode):
    c = sample_case(get_case("unit_disk"), 0.05)
    delta = 0.15
    f = np.ones(c.n_interior)
    blk = assemble_system(c, delta, f, np.ones(c.n_boundary), mode=mode)

    # the diagonal is a row sum, so constants cancel up to rounding
    scale = np.max(np.abs(blk.A.diagonal()))
    assert np.max(np.abs(blk.A @ np.ones(c.n_interior))) <= 1e-14 * scale
    far = c.boundary_distance() > 2 * delta
    assert far.any()
    assert blk.B[far].nnz == 0
    assert np.all(blk.r_tilde > 0)

    # support locality
    for M, P, Q in ((blk.A, c.X, c.X), (blk.B, c.X, c.Y), (blk.D, c.Y, c.X)):
        coo = M.tocoo()
        assert np.all(np.linalg.norm(P[coo.row] - Q[coo.col], axis=1) <= 2 * delta * (1 + 1e-12))

    # weighted symmetry of the off-diagonal part of A
    off = blk.A.toarray()
    np.fill_diagonal(off, 0.0)
    WA = c.w[:, None] * off
    assert np.max(np.abs(WA - WA.T)) <= 1e-12 * np.max(np.abs(WA))


def test_modes_agree_away_from_boundary():
    c = sample_case(get_case("unit_disk"), 0.05)
    delta = 0.15
    f = get_case("unit_disk").solution().f(c.X)
    fb = np.zeros(c.n_boundary)
    a = assemble_system(c, delta, f, fb, mode="corrected")
    b = assemble_system(c, delta, f, fb, mode="legacy")
    far = c.boundary_distance() > 2 * delta
    assert (a.A[far] != b.A[far]).nnz == 0
    assert np.array_equal(a.rhs_in[far], b.rhs_in[far])
    # near the curved boundary the κ terms do change things
    assert not np.allclose(a.r_tilde, b.r_tilde)


def test_linearity_and_trivial_inputs():
    c = sample_case(get_case("hemisphere"), 0.05)
    ops = NonlocalOperators(c, 0.15)
    rng = np.random.default_rng(0)
    u1, u2 = rng.standard_normal((2, c.n_interior))
    lhs = ops.apply_L(2.5 * u1 - 0.5 * u2)
    rhs = 2.5 * ops.apply_L(u1) - 0.5 * ops.apply_L(u2)
    assert np.max(np.abs(lhs - rhs)) <= 1e-12 * np.max(np.abs(rhs))
    scale = np.max(np.abs(ops.kernel_mass(0))) / ops.delta**2
    assert np.max(np.abs(ops.apply_L(np.full(c.n_interior, 3.0)))) <= 1e-14 * 3.0 * scale
    assert np.all(ops.apply_G(np.zeros(c.n_boundary)) == 0.0)
    assert np.all(ops.apply_P(np.zeros(c.n_interior), np.zeros(c.n_boundary)) == 0.0)
    assert np.all(ops.apply_D(np.zeros(c.n_interior)) == 0.0)
    assert np.all(ops.apply_Q(np.zeros(c.n_interior)) == 0.0)
    assert np.all(ops.apply_Q(np.abs(u1)) <= 0.0)


def test_ratio_and_mode_errors():
    c = sample_case(get_case("unit_disk"), 0.05)
    with pytest.raises(AccuracyError):
        NonlocalOperators(c, 0.08)
    with pytest.raises(ValueError):
        NonlocalOperators(c, 0.2, mode="uncorrected")
    with pytest.raises(ValueError):
        NonlocalOperators(c, 0.2).apply_P(np.ones(c.n_interior))


def test_storage_and_triplets(tmp_path):
    c = sample_case(get_case("half_circle_arc"), 0.02)
    f = np.ones(c.n_interior)
    sparse = assemble_system(c, 0.06, f, np.ones(c.n_boundary))
    dense = assemble_system(c, 0.06, f, np.ones(c.n_boundary), storage="dense")
    assert not dense.is_sparse
    assert np.array_equal(sparse.matrix().toarray(), dense.matrix())
    with pytest.raises(ValueError):
        assemble_system(c, 0.06, f, np.ones(c.n_boundary), storage="banded")

    p = tmp_path / "m.csv"
    sparse.to_triplets(p)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["row", "col", "value"]
    n = c.n_interior + c.n_boundary
    M = np.zeros((n, n))
    for r, k, val in rows[1:]:
        M[int(r), int(k)] = float(val)
    assert np.array_equal(M, dense.matrix())


def test_assembly_is_deterministic():
    c = sample_case(get_case("hemisphere"), 0.05)
    f = np.ones(c.n_interior)
    a = assemble_system(c, 0.15, f, np.ones(c.n_boundary))
    b = assemble_system(c, 0.15, f, np.ones(c.n_boundary))
    assert (a.A != b.A).nnz == 0 and (a.D != b.D).nnz == 0
    assert np.array_equal(a.r_tilde, b.r_tilde) and np.array_equal(a.rhs_in, b.rhs_in)


# ---------------------------------------------------------------------------
# fine-grid oracles on the unit disk / interval


def _kernel(level, delta, m):
    C = (4 * math.pi * delta**2) ** (-m / 2)
    return lambda sq: C * COSINE.eval(level, sq / (4 * delta**2))


def _disk_oracle(x, g, delta, n_r=400, n_a=2048):
    """∫ over {|y| ≤ 1, |y − x| ≤ 2δ} of g(y) via a masked polar grid about x."""
    t, tw = np.polynomial.legendre.leggauss(n_r)
    rho, rw = delta * (t + 1), delta * tw
    a = 2 * math.pi * (np.arange(n_a) + 0.5) / n_a
    R, A = np.meshgrid(rho, a, indexing="ij")
    Y = np.stack([x[0] + R * np.cos(A), x[1] + R * np.sin(A)], axis=-1)
    W = (rw * rho)[:, None] * (2 * math.pi / n_a) * (np.sum(Y**2, axis=-1) <= 1.0)
    return float(np.sum(g(Y) * W))


def _circle_oracle(x, g, n=20000):
    a = 2 * math.pi * np.arange(n) / n
    Y = np.stack([np.cos(a), np.sin(a)], axis=-1)
    return float(np.sum(g(Y)) * 2 * math.pi / n)


def _sq(x, Y):
    return np.sum((Y - x) ** 2, axis=-1)


def test_L_quadratic_on_interval():
    delta = 0.05
    c = sample_case(get_case("interval"), delta / 8)
    i = int(np.argmin(np.abs(c.X[:, 0] - 0.5)))
    val = NonlocalOperators(c, delta).apply_L(c.X[:, 0] ** 2, at=i)[0]
    K = _kernel(0, delta, 1)
    # u(x) − u(x+z) = −2xz − z², the odd part integrates to zero
    oracle = -integrate.quad(lambda z: z * z * K(z * z), -2 * delta, 2 * delta, epsabs=1e-13)[0] / delta**2
    assert val == pytest.approx(oracle, rel=1e-2)


@pytest.mark.parametrize("mode", MODES)
def test_G_near_disk_boundary(mode):
    delta = 0.1
    c = sample_case(get_case("unit_disk"), delta / 8)
    i = int(np.argmin(_sq(np.array([1 - delta, 0.0]), c.X)))
    x = c.X[i]
    val = NonlocalOperators(c, delta, mode=mode).apply_G(np.ones(c.n_boundary), at=i)[0]
    K = _kernel(1, delta, 2)
    kap = -1.0 if mode == "corrected" else 0.0
    oracle = _circle_oracle(x, lambda Y: (2 + kap * np.sum((x - Y) * Y, axis=-1)) * K(_sq(x, Y)))
    assert val == pytest.approx(oracle, rel=1e-2)


def test_P_far_from_boundary_is_rbar_moment():
    delta = 0.1
    c = sample_case(get_case("unit_disk"), delta / 8)
    i = int(np.argmin(_sq(np.zeros(2), c.X)))
    val = NonlocalOperators(c, delta).apply_P(np.ones(c.n_interior), np.ones(c.n_boundary), at=i)[0]
    moment = integrate.quad(lambda s: COSINE.eval(1, s), 0, 1)[0]
    assert moment == pytest.approx(0.25 - 1 / math.pi**2, rel=1e-12)
    assert val == pytest.approx(moment, rel=1e-2)


def test_P_at_boundary_layer():
    delta = 0.1
    c = sample_case(get_case("unit_disk"), delta / 8)
    i = int(np.argmax(np.sum(c.X**2, axis=1)))
    x = c.X[i]
    val = NonlocalOperators(c, delta).apply_P(np.ones(c.n_interior), np.ones(c.n_boundary), at=i)[0]
    K = _kernel(1, delta, 2)
    oracle = (_disk_oracle(x, lambda Y: K(_sq(x, Y)), delta)
              - _circle_oracle(x, lambda Y: np.sum((x - Y) * Y, axis=-1) * K(_sq(x, Y))))
    assert val == pytest.approx(oracle, rel=1e-2)


def test_D_manufactured_at_disk_boundary():
    delta = 0.1
    case = get_case("unit_disk")
    sol = case.solution()
    c = sample_case(case, delta / 8)
    j = int(np.argmin(_sq(np.array([1.0, 0.0]), c.Y)))
    x = c.Y[j]
    assert np.allclose(x, [1.0, 0.0])
    val = NonlocalOperators(c, delta).apply_D(sol.u(c.X), at=j)[0]
    K = _kernel(1, delta, 2)

    def g(Y):
        flat = Y.reshape(-1, 2)
        u = sol.u(flat).reshape(Y.shape[:-1])
        return u * (2 + np.sum((x - Y) * x, axis=-1)) * K(_sq(x, Y))

    assert val == pytest.approx(_disk_oracle(x, g, delta), rel=1e-2)


def test_tilde_R_disk_oracle():
    delta = 0.1
    c = sample_case(get_case("unit_disk"), delta / 8)
    j = int(np.argmin(_sq(np.array([1.0, 0.0]), c.Y)))
    x = c.Y[j]
    val = tilde_R(c, delta, at=j)[0]
    K1, K2 = _kernel(1, delta, 2), _kernel(2, delta, 2)
    first = 4 * delta**2 * _circle_oracle(x, lambda Y: K2(_sq(x, Y)))
    second = _disk_oracle(x, lambda Y: np.sum((x - Y) * x, axis=-1) ** 2 * K1(_sq(x, Y)), delta)
    oracle = first + second  # κ_n = −1
    assert val > 0
    assert val == pytest.approx(oracle, rel=1e-2)


def test_tilde_R_first_term_halves_with_delta():
    # 4δ² ∫_∂M R̿_δ scales like δ^{2−m} · δ^{m−1} = δ for a curve boundary
    vals = []
    for delta in (0.1, 0.05):
        c = sample_case(get_case("unit_disk"), delta / 8)
        j = int(np.argmin(_sq(np.array([1.0, 0.0]), c.Y)))
        vals.append(tilde_R(c, delta, at=j, mode="legacy")[0])
        K2 = _kernel(2, delta, 2)
        x = c.Y[j]
        assert vals[-1] == pytest.approx(4 * delta**2 * _circle_oracle(x, lambda Y: K2(_sq(x, Y))),
                                         rel=1e-2)
    assert vals[1] / vals[0] == pytest.approx(0.5, rel=1e-2)


def test_tilde_R_interval_endpoint():
    delta = 0.05
    c = sample_case(get_case("interval"), delta / 8)
    C = (4 * math.pi * delta**2) ** -0.5
    expected = 4 * delta**2 * C * (0.25 - 1 / math.pi**2)
    assert np.allclose(tilde_R(c, delta), expected, rtol=1e-13)
    assert np.allclose(tilde_R(c, delta, mode="legacy"), expected, rtol=1e-13)


def test_Q_half_ball_mass():
    delta = 0.1
    c = sample_case(get_case("unit_disk"), delta / 8)
    j = int(np.argmin(_sq(np.array([0.0, 1.0]), c.Y)))
    x = c.Y[j]
    val = apply_Q(c, delta, np.ones(c.n_interior), at=j)[0]
    K2 = _kernel(2, delta, 2)
    oracle = -2 * delta**2 * _disk_oracle(x, lambda Y: K2(_sq(x, Y)), delta)
    assert val < 0
    assert val == pytest.approx(oracle, rel=1e-2)
