"""The six nonlocal operators and the assembled block system.

Interior equation, for x ∈ M::

    L u(x) − G v(x) = P f(x)

    L u(x) = δ⁻² ∫_M (u(x) − u(y)) R_δ(x, y) dμ_y
    G v(x) = ∫_∂M v(y) (2 + (x − y)·κ_n(y) n(y)) R̄_δ(x, y) dτ_y
    P f(x) = ∫_M f(y) R̄_δ(x, y) dμ_y − ∫_∂M ((x − y)·n(y)) f(y) R̄_δ(x, y) dτ_y

Boundary equation, for x ∈ ∂M::

    D u(x) + R̃(x) v(x) = Q f(x)

    D u(x) = ∫_M u(y) (2 − (x − y)·κ_n(x) n(x)) R̄_δ(x, y) dμ_y
    R̃(x)  = 4δ² ∫_∂M R̿_δ(x, y) dτ_y − κ_n(x) ∫_M ((x − y)·n(x))² R̄_δ(x, y) dμ_y
    Q f(x) = −2δ² ∫_M f(y) R̿_δ(x, y) dμ_y

``mode="legacy"`` drops every κ_n term and the boundary part of P, which is
the older model with a plain ``2 R̄_δ`` boundary flux.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from ._pairs import PairEngine
from .kernels import COSINE, KernelProfile
from .sampling import QuadratureCloud

MODES = ("corrected", "legacy")

# kernel level indices
_R, _RBAR, _RDBAR = 0, 1, 2


class AccuracyError(ValueError):
    """Horizon too small for the node spacing."""


def _check_mode(mode: str) -> str:
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    return mode


class NonlocalOperators:
    """Operator evaluation on a fixed cloud and horizon.

    Interior targets are addressed by interior-node index, boundary targets by
    boundary-node index; ``None`` means every node of that kind.
    """

    min_ratio = 2.0

    def __init__(self, cloud: QuadratureCloud, delta: float, mode: str = "corrected",
                 profile: KernelProfile = COSINE, check_ratio: bool = True):
        if delta <= 0:
            raise ValueError("delta must be positive")
        if check_ratio and delta / cloud.spacing < self.min_ratio:
            raise AccuracyError(
                f"delta/h = {delta / cloud.spacing:.3g} is below {self.min_ratio}; refine the cloud")
        self.cloud = cloud
        self.delta = float(delta)
        self.mode = _check_mode(mode)
        self.profile = profile

    @property
    def corrected(self) -> bool:
        return self.mode == "corrected"

    @cached_property
    def interior_engine(self) -> PairEngine:
        return PairEngine(self.cloud.X, self.delta, self.cloud.m, self.profile)

    @cached_property
    def boundary_engine(self) -> PairEngine:
        return PairEngine(self.cloud.Y, self.delta, self.cloud.m, self.profile)

    def _interior_targets(self, at):
        idx = np.arange(self.cloud.n_interior) if at is None else np.atleast_1d(at)
        return idx, self.cloud.X[idx]

    def _boundary_targets(self, at):
        idx = np.arange(self.cloud.n_boundary) if at is None else np.atleast_1d(at)
        return idx, self.cloud.Y[idx]

    # -- interior equation ---------------------------------------------------

    def apply_L(self, u, at=None) -> np.ndarray:
        c = self.cloud
        u = np.asarray(u, dtype=float)
        idx, T = self._interior_targets(at)
        sums = self.interior_engine.sums(T, np.column_stack([c.w, c.w * u]), [_R, _R])
        return (u[idx] * sums[:, 0] - sums[:, 1]) / self.delta**2

    def apply_G(self, v, at=None) -> np.ndarray:
        c = self.cloud
        _, T = self._interior_targets(at)
        vals = np.asarray(v, dtype=float) * c.s
        e = c.kappa[:, None] * c.normal if self.corrected else None
        return self.boundary_engine.sums(T, vals, _RBAR, a=2.0, e=e)

    def apply_P(self, f_interior, f_boundary=None, at=None) -> np.ndarray:
        c = self.cloud
        _, T = self._interior_targets(at)
        out = self.interior_engine.sums(T, np.asarray(f_interior, dtype=float) * c.w, _RBAR)
        if self.corrected:
            if f_boundary is None:
                raise ValueError("corrected P needs f at the boundary nodes")
            fb = np.asarray(f_boundary, dtype=float) * c.s
            out = out - self.boundary_engine.sums(T, fb, _RBAR, a=0.0, e=c.normal)
        return out

    # -- boundary equation ---------------------------------------------------

    def apply_D(self, u, at=None) -> np.ndarray:
        c = self.cloud
        idx, T = self._boundary_targets(at)
        vals = np.asarray(u, dtype=float) * c.w
        cvec = -c.kappa[idx, None] * c.normal[idx] if self.corrected else None
        return self.interior_engine.sums(T, vals, _RBAR, a=2.0, c=cvec)

    def tilde_R(self, at=None) -> np.ndarray:
        c = self.cloud
        idx, T = self._boundary_targets(at)
        out = 4.0 * self.delta**2 * self.boundary_engine.sums(T, c.s, _RDBAR)
        if self.corrected:
            second = self.interior_engine.sums(T, c.w, _RBAR, a=0.0, q=c.normal[idx])
            out = out - c.kappa[idx] * second
        return out

    def apply_Q(self, f_interior, at=None) -> np.ndarray:
        c = self.cloud
        _, T = self._boundary_targets(at)
        vals = np.asarray(f_interior, dtype=float) * c.w
        return -2.0 * self.delta**2 * self.interior_engine.sums(T, vals, _RDBAR)

    # -- weighted averages ---------------------------------------------------

    def kernel_mass(self, level: int, at=None) -> np.ndarray:
        _, T = self._interior_targets(at)
        return self.interior_engine.sums(T, self.cloud.w, level)

    # -- assembly ------------------------------------------------------------

    def assemble(self, f_interior, f_boundary=None, storage: str = "sparse") -> "OperatorBlocks":
        c = self.cloud
        N, Nb = c.n_interior, c.n_boundary
        X, Y = c.X, c.Y

        rows, cols, vals = self.interior_engine.coo(X, c.w, _R)
        K = sp.csr_matrix((vals, (rows, cols)), shape=(N, N))
        off = K.copy()
        off.setdiag(0.0)
        off.eliminate_zeros()
        # the diagonal term (u(x) − u(x)) vanishes, so only off-diagonal pairs enter
        A = (sp.diags(np.asarray(off.sum(axis=1)).ravel()) - off) / self.delta**2

        e = c.kappa[:, None] * c.normal if self.corrected else None
        rows, cols, vals = self.boundary_engine.coo(X, c.s, _RBAR, a=2.0, e=e)
        B = sp.csr_matrix((vals, (rows, cols)), shape=(N, Nb))

        cvec = -c.kappa[:, None] * c.normal if self.corrected else None
        rows, cols, vals = self.interior_engine.coo(Y, c.w, _RBAR, a=2.0, c=cvec)
        D = sp.csr_matrix((vals, (rows, cols)), shape=(Nb, N))

        blocks = OperatorBlocks(
            A=A.tocsr(), B=B, D=D, r_tilde=self.tilde_R(),
            rhs_in=self.apply_P(f_interior, f_boundary), rhs_bd=self.apply_Q(f_interior),
            delta=self.delta, mode=self.mode, w=c.w,
        )
        if storage == "dense":
            blocks = blocks.densified()
        elif storage != "sparse":
            raise ValueError(f"unknown storage {storage!r}")
        return blocks


@dataclass
class OperatorBlocks:
    """[A, −B; D, diag(r̃)] [u; v] = [rhs_in; rhs_bd]."""

    A: object
    B: object
    D: object
    r_tilde: np.ndarray
    rhs_in: np.ndarray
    rhs_bd: np.ndarray
    delta: float
    mode: str
    w: np.ndarray | None = None  # interior weights; W·A is symmetric

    @property
    def n_interior(self) -> int:
        return self.A.shape[0]

    @property
    def n_boundary(self) -> int:
        return len(self.r_tilde)

    @property
    def is_sparse(self) -> bool:
        return sp.issparse(self.A)

    def densified(self) -> "OperatorBlocks":
        def dense(M):
            return M.toarray() if sp.issparse(M) else np.asarray(M)

        return OperatorBlocks(dense(self.A), dense(self.B), dense(self.D), self.r_tilde,
                              self.rhs_in, self.rhs_bd, self.delta, self.mode, self.w)

    def matrix(self):
        """The full coupled matrix (sparse CSC when the blocks are sparse)."""
        if self.is_sparse:
            return sp.bmat([[self.A, -self.B], [self.D, sp.diags(self.r_tilde)]], format="csc")
        return np.block([[self.A, -self.B], [self.D, np.diag(self.r_tilde)]])

    def rhs(self) -> np.ndarray:
        return np.concatenate([self.rhs_in, self.rhs_bd])

    def apply(self, u, v):
        """Block action: (A u − B v, D u + r̃ v)."""
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        return self.A @ u - self.B @ v, self.D @ u + self.r_tilde * v

    def to_triplets(self, path) -> None:
        """Dump the coupled matrix as (row, col, value) CSV triplets."""
        M = sp.coo_matrix(self.matrix())
        order = np.lexsort((M.col, M.row))
        with open(path, "w", newline="") as fh:
            out = csv.writer(fh)
            out.writerow(["row", "col", "value"])
            for k in order:
                out.writerow([int(M.row[k]), int(M.col[k]), repr(float(M.data[k]))])


# module-level forms mirroring the operation list


def apply_L(cloud, delta, u, at=None, **kw):
    return NonlocalOperators(cloud, delta, **kw).apply_L(u, at)


def apply_G(cloud, delta, v, at=None, **kw):
    return NonlocalOperators(cloud, delta, **kw).apply_G(v, at)


def apply_P(cloud, delta, f_interior, f_boundary=None, at=None, **kw):
    return NonlocalOperators(cloud, delta, **kw).apply_P(f_interior, f_boundary, at)


def apply_D(cloud, delta, u, at=None, **kw):
    return NonlocalOperators(cloud, delta, **kw).apply_D(u, at)


def tilde_R(cloud, delta, at=None, **kw):
    return NonlocalOperators(cloud, delta, **kw).tilde_R(at)


def apply_Q(cloud, delta, f_interior, at=None, **kw):
    return NonlocalOperators(cloud, delta, **kw).apply_Q(f_interior, at)


def assemble_system(cloud, delta, f_interior, f_boundary=None, mode="corrected",
                    storage="sparse", **kw) -> OperatorBlocks:
    return NonlocalOperators(cloud, delta, mode=mode, **kw).assemble(f_interior, f_boundary, storage)
