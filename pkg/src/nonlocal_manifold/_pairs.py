"""Compiled pair loops over ambient points within kernel support.

Every operator reduces to sums of the form

    S_t = Σ_j C_δ level(r_tj) · φ(t, j) · V_j,    r_tj = |x_t - y_j|² / 4δ²

with the pair factor

    φ(t, j) = a + (x_t - y_j)·(c_t + e_j) + ((x_t - y_j)·q_t)²

Sources are bucketed into cubic cells of side 2δ; each target scans the 3^d
neighbouring cells in a fixed order, so sums are reproducible bit for bit.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .kernels import COSINE_CODE

_PI = math.pi


@numba.njit(cache=True, inline="always")
def _level_value(code, level, r, table):
    if r > 1.0:
        return 0.0
    if code == COSINE_CODE:
        om = 1.0 - r
        if level == 0:
            return 0.5 * (1.0 + math.cos(_PI * r))
        if level == 1:
            return 0.5 * om - math.sin(_PI * r) / (2.0 * _PI)
        if level == 2:
            return om * om / 4.0 - (1.0 + math.cos(_PI * r)) / (2.0 * _PI * _PI)
        return om * om * om / 12.0 - om / (2.0 * _PI * _PI) + math.sin(_PI * r) / (2.0 * _PI**3)
    n = table.shape[1] - 1
    t = r * n
    i = int(t)
    if i >= n:
        i = n - 1
    frac = t - i
    return table[level, i] * (1.0 - frac) + table[level, i + 1] * frac


@dataclass(frozen=True)
class CellList:
    """Sources sorted into cubic cells of side ``cell``."""

    origin: np.ndarray
    cell: float
    shape: np.ndarray  # cells per axis
    order: np.ndarray  # source indices sorted by cell id (stable)
    start: np.ndarray  # CSR offsets, len = n_cells + 1

    @classmethod
    def build(cls, points: np.ndarray, cell: float) -> "CellList":
        pts = np.ascontiguousarray(points, dtype=float)
        d = pts.shape[1]
        lo = pts.min(axis=0) - 1e-9 if len(pts) else np.zeros(d)
        hi = pts.max(axis=0) + 1e-9 if len(pts) else np.ones(d)
        shape = np.maximum(np.ceil((hi - lo) / cell).astype(np.int64), 1)
        idx = np.minimum(((pts - lo) / cell).astype(np.int64), shape - 1)
        strides = np.cumprod(np.concatenate([[1], shape[:-1]]))
        cid = idx @ strides
        order = np.argsort(cid, kind="stable")
        counts = np.bincount(cid, minlength=int(np.prod(shape)))
        start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        return cls(lo, float(cell), shape, order.astype(np.int64), start)


@numba.njit(cache=True)
def _neighbour_cells(x, origin, cell, shape, out):
    """Write ids of the (up to 3^d) cells around x into ``out``; return count."""
    d = x.shape[0]
    base = np.empty(d, dtype=np.int64)
    for a in range(d):
        b = int(math.floor((x[a] - origin[a]) / cell))
        base[a] = b
    n = 0
    total = 1
    for a in range(d):
        total *= 3
    for code in range(total):
        cid = 0
        stride = 1
        ok = True
        rem = code
        for a in range(d):
            off = rem % 3 - 1
            rem //= 3
            c = base[a] + off
            if c < 0 or c >= shape[a]:
                ok = False
                break
            cid += c * stride
            stride *= shape[a]
        if ok:
            out[n] = cid
            n += 1
    return n


@numba.njit(cache=True)
def _pair_factor(xt, ys, a, ct, ej, qt, use_c, use_e, use_q):
    phi = a
    d = xt.shape[0]
    if use_c or use_e:
        lin = 0.0
        for k in range(d):
            diff = xt[k] - ys[k]
            v = 0.0
            if use_c:
                v += ct[k]
            if use_e:
                v += ej[k]
            lin += diff * v
        phi += lin
    if use_q:
        quad = 0.0
        for k in range(d):
            quad += (xt[k] - ys[k]) * qt[k]
        phi += quad * quad
    return phi


@numba.njit(cache=True)
def _pair_sums(tx, sx, vals, levels, a, c, e, q, use_c, use_e, use_q,
               inv4d2, norm, code, table, origin, cell, shape, order, start):
    nt = tx.shape[0]
    k = vals.shape[1]
    out = np.zeros((nt, k))
    cells = np.empty(27, dtype=np.int64)
    need = np.zeros(4, dtype=np.bool_)
    for col in range(k):
        need[levels[col]] = True
    lv = np.zeros(4)
    for t in range(nt):
        xt = tx[t]
        nc = _neighbour_cells(xt, origin, cell, shape, cells)
        acc = np.zeros(k)
        for ci in range(nc):
            cid = cells[ci]
            for p in range(start[cid], start[cid + 1]):
                j = order[p]
                ys = sx[j]
                sq = 0.0
                for dd in range(xt.shape[0]):
                    diff = xt[dd] - ys[dd]
                    sq += diff * diff
                r = sq * inv4d2
                if r > 1.0:
                    continue
                phi = _pair_factor(xt, ys, a, c[t], e[j], q[t], use_c, use_e, use_q)
                for lev in range(4):
                    if need[lev]:
                        lv[lev] = _level_value(code, lev, r, table)
                for col in range(k):
                    acc[col] += lv[levels[col]] * phi * vals[j, col]
        for col in range(k):
            out[t, col] = norm * acc[col]
    return out


@numba.njit(cache=True)
def _pair_count(tx, sx, inv4d2, origin, cell, shape, order, start):
    nt = tx.shape[0]
    counts = np.zeros(nt, dtype=np.int64)
    cells = np.empty(27, dtype=np.int64)
    for t in range(nt):
        xt = tx[t]
        nc = _neighbour_cells(xt, origin, cell, shape, cells)
        cnt = 0
        for ci in range(nc):
            cid = cells[ci]
            for p in range(start[cid], start[cid + 1]):
                ys = sx[order[p]]
                sq = 0.0
                for dd in range(xt.shape[0]):
                    diff = xt[dd] - ys[dd]
                    sq += diff * diff
                if sq * inv4d2 <= 1.0:
                    cnt += 1
        counts[t] = cnt
    return counts


@numba.njit(cache=True)
def _pair_coo(tx, sx, sw, level, a, c, e, q, use_c, use_e, use_q, inv4d2, norm,
              code, table, origin, cell, shape, order, start, offsets, rows, cols, data):
    nt = tx.shape[0]
    cells = np.empty(27, dtype=np.int64)
    for t in range(nt):
        xt = tx[t]
        nc = _neighbour_cells(xt, origin, cell, shape, cells)
        pos = offsets[t]
        for ci in range(nc):
            cid = cells[ci]
            for p in range(start[cid], start[cid + 1]):
                j = order[p]
                ys = sx[j]
                sq = 0.0
                for dd in range(xt.shape[0]):
                    diff = xt[dd] - ys[dd]
                    sq += diff * diff
                r = sq * inv4d2
                if r > 1.0:
                    continue
                phi = _pair_factor(xt, ys, a, c[t], e[j], q[t], use_c, use_e, use_q)
                rows[pos] = t
                cols[pos] = j
                data[pos] = norm * _level_value(code, level, r, table) * phi * sw[j]
                pos += 1


def _vec_or_dummy(arr, n, d):
    if arr is None:
        return np.zeros((n, d)), False
    arr = np.ascontiguousarray(np.broadcast_to(np.asarray(arr, dtype=float), (n, d)))
    return arr, True


class PairEngine:
    """Kernel-weighted sums from a fixed set of source points.

    Built once per (sources, δ); reused for every target set and operator.
    """

    def __init__(self, sources: np.ndarray, delta: float, m: int, profile):
        from .kernels import normalization

        self.sources = np.ascontiguousarray(sources, dtype=float)
        self.delta = float(delta)
        self.m = int(m)
        self.profile = profile
        self.norm = normalization(delta, m)
        self.inv4d2 = 1.0 / (4.0 * delta * delta)
        self.cells = CellList.build(self.sources, 2.0 * delta)
        self._table = np.ascontiguousarray(profile.numba_table(), dtype=float)

    @property
    def dim(self) -> int:
        return self.sources.shape[1]

    def _cell_args(self):
        cl = self.cells
        return cl.origin, cl.cell, cl.shape, cl.order, cl.start

    def sums(self, targets, vals, levels, a=1.0, c=None, e=None, q=None) -> np.ndarray:
        """Σ_j K_level(t, j) φ(t, j) vals[j, col] for every target and column."""
        tx = np.ascontiguousarray(np.atleast_2d(targets), dtype=float)
        vals = np.asarray(vals, dtype=float)
        squeeze = vals.ndim == 1
        vals = np.ascontiguousarray(vals.reshape(len(self.sources), -1))
        levels = np.asarray(np.broadcast_to(levels, (vals.shape[1],)), dtype=np.int64)
        nt, d = tx.shape
        cc, use_c = _vec_or_dummy(c, nt, d)
        qq, use_q = _vec_or_dummy(q, nt, d)
        ee, use_e = _vec_or_dummy(e, len(self.sources), d)
        out = _pair_sums(tx, self.sources, vals, np.ascontiguousarray(levels), float(a),
                         cc, ee, qq, use_c, use_e, use_q, self.inv4d2, self.norm,
                         self.profile.code, self._table, *self._cell_args())
        return out[:, 0] if squeeze else out

    def coo(self, targets, weights, level, a=1.0, c=None, e=None, q=None):
        """(rows, cols, values) of K_level(t, j) φ(t, j) weights[j] over supported pairs."""
        tx = np.ascontiguousarray(np.atleast_2d(targets), dtype=float)
        nt, d = tx.shape
        counts = _pair_count(tx, self.sources, self.inv4d2, *self._cell_args())
        offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        nnz = int(offsets[-1])
        rows = np.empty(nnz, dtype=np.int64)
        cols = np.empty(nnz, dtype=np.int64)
        data = np.empty(nnz)
        cc, use_c = _vec_or_dummy(c, nt, d)
        qq, use_q = _vec_or_dummy(q, nt, d)
        ee, use_e = _vec_or_dummy(e, len(self.sources), d)
        sw = np.ascontiguousarray(weights, dtype=float)
        _pair_coo(tx, self.sources, sw, int(level), float(a), cc, ee, qq, use_c, use_e, use_q,
                  self.inv4d2, self.norm, self.profile.code, self._table, *self._cell_args(),
                  offsets, rows, cols, data)
        return rows, cols, data
