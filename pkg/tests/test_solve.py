import csv

import numpy as np
import pytest

from nonlocal_manifold.catalog import get_case
from nonlocal_manifold.operators import OperatorBlocks, assemble_system
from nonlocal_manifold.residuals import solution_error
from nonlocal_manifold.sampling import sample_case
from nonlocal_manifold.solve import (ConvergenceError, SingularSystemError, SolveDataError,
                                     solve_coupled)


def _system(cid, delta, ratio=8, scale=1.0, label=None, mode="corrected"):
    case = get_case(cid)
    sol = case.solution(label)
    c = sample_case(case, delta / ratio)
    blk = assemble_system(c, delta, scale * sol.f(c.X), scale * sol.f(c.Y), mode=mode)
    return case, sol, c, blk


def test_zero_forcing_gives_zero_pair():
    case = get_case("unit_disk")
    c = sample_case(case, 0.05)
    blk = assemble_system(c, 0.2, np.zeros(c.n_interior), np.zeros(c.n_boundary))
    out = solve_coupled(blk)
    assert np.all(out.u == 0.0) and np.all(out.v == 0.0)
    assert out.residual_norm == 0.0


@pytest.mark.parametrize("method", ["dense", "reduced", "sparse_lu"])
def test_linearity_in_rhs(method):
    _, _, _, blk = _system("half_circle_arc", 0.1)
    _, _, _, blk3 = _system("half_circle_arc", 0.1, scale=3.0)
    a = solve_coupled(blk, method)
    b = solve_coupled(blk3, method)
    assert np.max(np.abs(b.u - 3.0 * a.u)) <= 1e-10 * np.max(np.abs(b.u))
    assert np.max(np.abs(b.v - 3.0 * a.v)) <= 1e-10 * np.max(np.abs(b.v))


@pytest.mark.parametrize("cid,delta", [("interval", 0.1), ("unit_disk", 0.2), ("hemisphere", 0.2)])
def test_methods_agree(cid, delta):
    _, _, _, blk = _system(cid, delta, ratio=4)
    ref = solve_coupled(blk, "dense")
    for method in ("reduced", "sparse_lu"):
        out = solve_coupled(blk, method)
        assert out.method == method
        assert np.max(np.abs(out.u - ref.u)) <= 1e-9 * np.max(np.abs(ref.u))
        assert np.max(np.abs(out.v - ref.v)) <= 1e-9 * np.max(np.abs(ref.v))
        assert out.residual_norm < 1e-10
        assert 1.0 <= out.condition_estimate < np.inf


def test_reapplied_blocks_reproduce_rhs():
    _, _, _, blk = _system("unit_disk", 0.2)
    out = solve_coupled(blk)
    ri, rb = blk.apply(out.u, out.v)
    r = np.concatenate([ri - blk.rhs_in, rb - blk.rhs_bd])
    assert np.linalg.norm(r) / np.linalg.norm(blk.rhs()) < 1e-10
    assert out.condition_estimate > 1.0


def test_auto_switches_to_reduced_for_large_systems():
    _, _, c, blk = _system("unit_disk", 0.1)
    assert c.n_interior + c.n_boundary > 3000
    assert solve_coupled(blk).method == "reduced"


def test_paraboloid_error_decreases_with_delta():
    errs = []
    for delta in (0.2, 0.1):
        case, sol, c, blk = _system("unit_disk", delta, label="paraboloid")
        assert np.allclose(sol.f(c.X), 4.0)
        out = solve_coupled(blk)
        errs.append(solution_error(case, out, c, sol)[0])
        assert np.max(np.abs(out.u - (1 - np.sum(c.X**2, axis=1)))) < 0.2
    assert errs[1] < errs[0]


def test_legacy_mode_solves_too():
    _, _, _, blk = _system("unit_disk", 0.2, mode="legacy")
    assert solve_coupled(blk).residual_norm < 1e-10


def _tiny(A, rhs_in=None):
    A = np.asarray(A, dtype=float)
    n = len(A)
    return OperatorBlocks(A=A, B=np.zeros((n, 1)), D=np.zeros((1, n)), r_tilde=np.ones(1),
                          rhs_in=np.ones(n) if rhs_in is None else rhs_in, rhs_bd=np.zeros(1),
                          delta=0.1, mode="corrected")


def test_singular_system_reports_pivot():
    A = [[1.0, 1.0], [1.0, 1.0]]
    with pytest.raises(SingularSystemError) as info:
        solve_coupled(_tiny(A), "dense")
    assert info.value.pivot_ratio < 1e-12
    with pytest.raises(SingularSystemError):
        solve_coupled(_tiny(A), "sparse_lu")

    nearly = [[1.0, 0.0], [0.0, 1e-14]]
    with pytest.raises(SingularSystemError) as info:
        solve_coupled(_tiny(nearly), "dense")
    assert info.value.pivot_ratio == pytest.approx(1e-14)


def test_bad_data_and_method():
    blk = _tiny(np.eye(2), rhs_in=np.array([1.0, np.nan]))
    with pytest.raises(SolveDataError):
        solve_coupled(blk)
    blk = _tiny([[np.inf, 0.0], [0.0, 1.0]])
    with pytest.raises(SolveDataError):
        solve_coupled(blk)
    with pytest.raises(ValueError):
        solve_coupled(_tiny(np.eye(2)), "cholesky")


def test_error_types():
    assert issubclass(ConvergenceError, ArithmeticError)
    assert issubclass(SolveDataError, ValueError)


def test_deterministic_and_csv(tmp_path):
    _, _, c, blk = _system("half_circle_arc", 0.1)
    a, b = solve_coupled(blk), solve_coupled(blk)
    assert np.array_equal(a.u, b.u) and np.array_equal(a.v, b.v)

    p = tmp_path / "sol.csv"
    a.to_csv(c, p)
    rows = list(csv.reader(open(p)))
    assert rows[0] == ["kind", "index", "x0", "x1", "value"]
    assert len(rows) == 1 + c.n_interior + c.n_boundary
    us = np.array([float(r[-1]) for r in rows[1:] if r[0] == "u"])
    assert np.array_equal(us, a.u)
    assert float(rows[1][2]) == c.X[0, 0]
