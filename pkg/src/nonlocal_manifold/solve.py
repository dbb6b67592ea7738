"""Direct and reduced solves of the coupled block system.

    [A   −B     ] [u]   [rhs_in]
    [D   diag(r̃)] [v] = [rhs_bd]

Small systems go through dense LU with partial pivoting.  Large ones
eliminate the boundary unknowns, v = (rhs_bd − D u)/r̃, which leaves

    S u = g,   S = A + B diag(1/r̃) D,   g = rhs_in + B (rhs_bd/r̃).

With interior weights W, W·S is symmetric whenever r̃ > 0 (the kernel is
symmetric and the curvature factors of B and D mirror each other), so the
reduced system is solved by Jacobi-preconditioned CG.  If CG meets a
non-positive curvature direction or stalls, sparse LU takes over.
"""

from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spl

from .operators import OperatorBlocks

METHODS = ("auto", "dense", "reduced", "sparse_lu")
PIVOT_TOL = 1e-12
RESIDUAL_TOL = 1e-10
DENSE_LIMIT = 3000


class SingularSystemError(ArithmeticError):
    """Pivot below PIVOT_TOL times the largest one."""

    def __init__(self, message: str, pivot_ratio: float):
        super().__init__(message)
        self.pivot_ratio = pivot_ratio


class SolveDataError(ValueError):
    pass


class ConvergenceError(ArithmeticError):
    pass


@dataclass
class SolutionPair:
    u: np.ndarray
    v: np.ndarray
    residual_norm: float
    condition_estimate: float
    method: str = "dense"

    def to_csv(self, cloud, path) -> None:
        """Rows of (kind, index, coordinates..., value), interior nodes first."""
        d = cloud.d
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["kind", "index"] + [f"x{k}" for k in range(d)] + ["value"])
            for kind, P, vals in (("u", cloud.X, self.u), ("v", cloud.Y, self.v)):
                for i, (p, val) in enumerate(zip(P, vals)):
                    out.writerow([kind, i] + [repr(float(c)) for c in p] + [repr(float(val))])


def _finite(M) -> bool:
    data = M.data if sp.issparse(M) else np.asarray(M)
    return bool(np.all(np.isfinite(data)))


def _check_blocks(blocks: OperatorBlocks) -> None:
    for name in ("A", "B", "D", "r_tilde", "rhs_in", "rhs_bd"):
        if not _finite(getattr(blocks, name)):
            raise SolveDataError(f"non-finite entries in block {name}")


def _relative_residual(blocks, u, v) -> float:
    ri, rb = blocks.apply(u, v)
    r = np.concatenate([ri - blocks.rhs_in, rb - blocks.rhs_bd])
    nb = np.linalg.norm(blocks.rhs())
    nr = float(np.linalg.norm(r))
    return nr / nb if nb > 0 else nr


def _pivot_check(pivots) -> None:
    piv = np.abs(np.asarray(pivots))
    top = piv.max() if piv.size else 0.0
    ratio = float(piv.min() / top) if top > 0 else 0.0
    if ratio < PIVOT_TOL:
        raise SingularSystemError(f"numerically singular system: min/max pivot {ratio:.3e}", ratio)


def _solve_dense(blocks):
    M = np.asarray(blocks.densified().matrix())
    with warnings.catch_warnings():
        # exact singularity is reported through the pivot check below
        warnings.simplefilter("ignore", la.LinAlgWarning)
        lu, piv = la.lu_factor(M, check_finite=False)
    _pivot_check(np.diag(lu))
    x = la.lu_solve((lu, piv), blocks.rhs(), check_finite=False)
    anorm = np.linalg.norm(M, 1)
    (getrf_gecon,) = la.get_lapack_funcs(("gecon",), (lu,))
    rcond, _ = getrf_gecon(lu, anorm, norm="1")
    return x, (1.0 / rcond if rcond > 0 else math.inf)


def _solve_sparse_lu(blocks):
    M = sp.csc_matrix(blocks.matrix())
    try:
        lu = spl.splu(M, permc_spec="COLAMD")
    except RuntimeError as exc:  # exactly singular
        raise SingularSystemError(str(exc), 0.0) from exc
    _pivot_check(lu.U.diagonal())
    x = lu.solve(blocks.rhs())
    n = M.shape[0]
    inv = spl.LinearOperator((n, n), matvec=lu.solve, rmatvec=lambda y: lu.solve(y, trans="T"),
                             dtype=float)
    cond = spl.onenormest(M) * spl.onenormest(inv)
    return x, float(cond)


def _pcg(S, g, dinv, tol, maxiter):
    """Preconditioned CG that also returns the Lanczos coefficients."""
    x = np.zeros_like(g)
    r = g.copy()
    z = dinv * r
    p = z.copy()
    rz = float(r @ z)
    gnorm = float(np.linalg.norm(g))
    alphas, betas = [], []
    for _ in range(maxiter):
        if gnorm == 0.0 or float(np.linalg.norm(r)) <= tol * gnorm:
            return x, alphas, betas, True
        Sp = S @ p
        curv = float(p @ Sp)
        if curv <= 0.0:
            return x, alphas, betas, False
        alpha = rz / curv
        x += alpha * p
        r -= alpha * Sp
        z = dinv * r
        rz_new = float(r @ z)
        beta = rz_new / rz
        alphas.append(alpha)
        betas.append(beta)
        p = z + beta * p
        rz = rz_new
    return x, alphas, betas, float(np.linalg.norm(r)) <= tol * gnorm


def _lanczos_condition(alphas, betas) -> float:
    """Condition number of the preconditioned operator from CG coefficients."""
    k = len(alphas)
    if k == 0:
        return 1.0
    a = np.asarray(alphas)
    b = np.asarray(betas)
    diag = 1.0 / a
    diag[1:] += b[:-1] / a[:-1]
    off = np.sqrt(b[:-1]) / a[:-1]
    ev = la.eigvalsh_tridiagonal(diag, off) if k > 1 else diag
    lo, hi = float(ev.min()), float(ev.max())
    return hi / lo if lo > 0 else math.inf


def _solve_reduced(blocks, tol=1e-13, maxiter=5000):
    rt = np.asarray(blocks.r_tilde, dtype=float)
    if blocks.w is None or np.any(rt <= PIVOT_TOL * np.abs(rt).max()):
        return None
    A, B, D = (sp.csr_matrix(blocks.A), sp.csr_matrix(blocks.B), sp.csr_matrix(blocks.D))
    W = sp.diags(blocks.w)
    S = (W @ (A + B @ sp.diags(1.0 / rt) @ D)).tocsr()
    g = blocks.w * (blocks.rhs_in + B @ (blocks.rhs_bd / rt))
    diag = S.diagonal()
    if np.any(diag <= 0):
        return None
    u, alphas, betas, ok = _pcg(S, g, 1.0 / diag, tol, maxiter)
    if not ok:
        return None
    v = (blocks.rhs_bd - D @ u) / rt
    return np.concatenate([u, v]), _lanczos_condition(alphas, betas)


def solve_coupled(blocks: OperatorBlocks, method: str = "auto") -> SolutionPair:
    """Solve for (u_δ, v_δ); ``auto`` picks dense LU below DENSE_LIMIT unknowns.

    ``condition_estimate`` is the LAPACK 1-norm estimate on the dense path,
    ``onenormest`` on the sparse LU path, and the Lanczos estimate of the
    Jacobi-preconditioned reduced operator on the CG path.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    _check_blocks(blocks)
    n = blocks.n_interior + blocks.n_boundary
    if method == "auto":
        method = "dense" if n <= DENSE_LIMIT else "reduced"

    if method == "dense":
        x, cond = _solve_dense(blocks)
    else:
        out = _solve_reduced(blocks) if method == "reduced" else None
        if out is None:
            method = "sparse_lu"
            x, cond = _solve_sparse_lu(blocks)
        else:
            x, cond = out

    if not np.all(np.isfinite(x)):
        raise SingularSystemError("solve produced non-finite values", 0.0)
    u, v = x[:blocks.n_interior], x[blocks.n_interior:]
    res = _relative_residual(blocks, u, v)
    if res >= RESIDUAL_TOL:
        raise ConvergenceError(f"relative algebraic residual {res:.3e} after {method} solve")
    return SolutionPair(u, v, res, cond, method)
