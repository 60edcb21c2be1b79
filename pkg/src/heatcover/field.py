"""Steady-state heat fields on masked grids.

Each subregion solves ``beta*T - alpha*Lap(T) = h`` with the 5-point stencil.
Faces whose neighbour lies outside the cell set use a reflected ghost value,
which removes the face from the stencil (homogeneous Neumann).  The
resulting matrix is a symmetric, strictly diagonally dominant M-matrix.
"""
from __future__ import annotations

import hashlib
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy import ndimage
from scipy.sparse.linalg import splu

from .geometry import RegionGrid

GRAD_EPS = 1e-12


class SolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class FieldParams:
    alpha: float = 1.0
    beta: float = 1.0
    solver_tol: float = 1e-10
    solver_max_iter: int = 5000
    method: str = "cg"  # "cg" (Jacobi-preconditioned CG) or "direct"

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if not self.solver_tol > 0:
            raise ValueError("solver_tol must be positive")
        if self.solver_max_iter < 1:
            raise ValueError("solver_max_iter must be a positive integer")
        if self.method not in ("cg", "direct"):
            raise ValueError(f"unknown solver method {self.method!r}")


@dataclass(eq=False)
class ScalarField:
    """Cell-centred values on a cell set; zero outside it.

    Off-centre queries use bilinear interpolation over the full grid after
    filling every cell outside the set with its nearest in-set value, so
    points outside the set read the nearest defined cell.
    """

    region: RegionGrid
    cells: np.ndarray
    values: np.ndarray
    _filled: Optional[np.ndarray] = field(default=None, repr=False)
    _fill_index: Optional[tuple] = field(default=None, repr=False)
    _grad: Optional[tuple] = field(default=None, repr=False)

    @property
    def filled(self) -> np.ndarray:
        if self._filled is None:
            self._filled = self.values[self.fill_index]
        return self._filled

    def _locate(self, p):
        g = self.region
        out = []
        for coord, o, n in ((p[0], g.origin[0], g.nx), (p[1], g.origin[1], g.ny)):
            u = (coord - o) / g.spacing - 0.5
            if n == 1:
                out.append((0, 0, 0.0, False))
                continue
            i0 = int(np.floor(u))
            i0 = min(max(i0, 0), n - 2)
            t = u - i0
            inside = 0.0 <= t <= 1.0
            out.append((i0, i0 + 1, min(max(t, 0.0), 1.0), inside))
        return out

    def value_at(self, p) -> float:
        (x0, x1, tx, _), (y0, y1, ty, _) = self._locate(p)
        f = self.filled
        return float(
            (1 - ty) * ((1 - tx) * f[y0, x0] + tx * f[y0, x1])
            + ty * ((1 - tx) * f[y1, x0] + tx * f[y1, x1])
        )

    @property
    def gradient_grid(self) -> tuple[np.ndarray, np.ndarray]:
        """Per-cell central differences (one-sided at set boundaries), filled."""
        if self._grad is None:
            self._grad = tuple(g[self.fill_index] for g in difference_gradient(self.values, self.cells, self.region.spacing))
        return self._grad

    @property
    def fill_index(self):
        if self._fill_index is None:
            self._fill_index = nearest_fill_index(self.cells)
        return self._fill_index

    def gradient_at(self, p) -> np.ndarray:
        """Exact gradient of the bilinear interpolant inside full quads;
        interpolated difference gradients in quads touching the set boundary."""
        (x0, x1, tx, inx), (y0, y1, ty, iny) = self._locate(p)
        h = self.region.spacing
        if inx and iny and x1 != x0 and y1 != y0 and self.cells[y0:y1 + 1, x0:x1 + 1].all():
            f = self.values
            gx = ((1 - ty) * (f[y0, x1] - f[y0, x0]) + ty * (f[y1, x1] - f[y1, x0])) / h
            gy = ((1 - tx) * (f[y1, x0] - f[y0, x0]) + tx * (f[y1, x1] - f[y0, x1])) / h
            return np.array([gx, gy])
        out = []
        for g in self.gradient_grid:
            out.append((1 - ty) * ((1 - tx) * g[y0, x0] + tx * g[y0, x1]) + ty * ((1 - tx) * g[y1, x0] + tx * g[y1, x1]))
        return np.array(out, dtype=float)

    def cell_values(self) -> np.ndarray:
        return self.values[self.cells]


def nearest_fill_index(cells: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    if cells.all():
        return tuple(np.indices(cells.shape))
    idx = ndimage.distance_transform_edt(~cells, return_distances=False, return_indices=True)
    return idx[0], idx[1]


def difference_gradient(values: np.ndarray, cells: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    out = []
    for axis in (1, 0):
        fwd = np.roll(cells, -1, axis) & cells
        bwd = np.roll(cells, 1, axis) & cells
        n = cells.shape[axis]
        edge = [slice(None)] * 2
        edge[axis] = n - 1
        fwd[tuple(edge)] = False
        edge[axis] = 0
        bwd[tuple(edge)] = False
        vf = np.roll(values, -1, axis)
        vb = np.roll(values, 1, axis)
        g = np.zeros_like(values)
        both = fwd & bwd
        g[both] = (vf[both] - vb[both]) / (2 * h)
        only_f = fwd & ~bwd
        g[only_f] = (vf[only_f] - values[only_f]) / h
        only_b = bwd & ~fwd
        g[only_b] = (values[only_b] - vb[only_b]) / h
        out.append(g)
    return out[0], out[1]


def sample_gradient(T: ScalarField, p) -> np.ndarray:
    """Gradient of the field's interpolant at ``p`` (see :meth:`ScalarField.gradient_at`)."""
    return T.gradient_at(np.asarray(p, dtype=float))


# ---------------------------------------------------------------------------
# operator and solvers


def assemble_operator(cells: np.ndarray, spacing: float, alpha: float, beta: float):
    """Sparse ``beta*I - alpha*Lap`` over the set cells, in row-major order."""
    ny, nx = cells.shape
    index = np.full(cells.shape, -1, dtype=np.int64)
    n = int(cells.sum())
    index[cells] = np.arange(n)
    k = alpha / spacing**2
    rows, cols = [], []
    degree = np.zeros(n)
    for a, b in ((index[:, :-1], index[:, 1:]), (index[:-1, :], index[1:, :])):
        sel = (a >= 0) & (b >= 0)
        i, j = a[sel], b[sel]
        rows += [i, j]
        cols += [j, i]
        np.add.at(degree, i, 1.0)
        np.add.at(degree, j, 1.0)
    rows = np.concatenate(rows) if rows else np.zeros(0, np.int64)
    cols = np.concatenate(cols) if cols else np.zeros(0, np.int64)
    off = sp.coo_matrix((np.full(len(rows), -k), (rows, cols)), shape=(n, n))
    A = (off + sp.diags(beta + k * degree)).tocsr()
    A.sum_duplicates()
    return A, index


def pcg(A, b, diag, x0, atol, maxiter):
    """Jacobi-preconditioned conjugate gradients; returns (x, iterations)."""
    x = x0.copy()
    dinv = 1.0 / diag
    total = 0
    for _restart in range(4):
        r = b - A @ x
        if np.linalg.norm(r) <= atol:
            return x, total
        z = dinv * r
        p = z.copy()
        rz = r @ z
        while total < maxiter:
            total += 1
            Ap = A @ p
            step = rz / (p @ Ap)
            x += step * p
            r -= step * Ap
            if np.linalg.norm(r) <= atol:
                break
            z = dinv * r
            rz_new = r @ z
            p *= rz_new / rz
            p += z
            rz = rz_new
        else:
            break
    if np.linalg.norm(b - A @ x) <= atol:
        return x, total
    raise SolverError(f"conjugate gradients did not converge within {maxiter} iterations")


class HeatOperator:
    """Assembled system for one cell set, with solver state."""

    def __init__(self, region: RegionGrid, cells: np.ndarray, params: FieldParams):
        self.region = region
        self.cells = np.array(cells, dtype=bool)
        self.params = params
        self.A, self.index = assemble_operator(self.cells, region.spacing, params.alpha, params.beta)
        self.diag = self.A.diagonal()
        self.fill = nearest_fill_index(self.cells)
        self._lu = None
        self.last: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.A.shape[0]

    def solve_vector(self, h: np.ndarray, x0: Optional[np.ndarray] = None) -> tuple[np.ndarray, int]:
        p = self.params
        if not np.any(h):
            return np.zeros_like(h), 0
        atol = p.solver_tol * (np.linalg.norm(h) + 1.0)
        if p.method == "direct":
            if self._lu is None:
                self._lu = splu(self.A.tocsc())
            return self._lu.solve(h), 0
        x0 = np.zeros_like(h) if x0 is None else x0
        return pcg(self.A, h, self.diag, x0, atol, p.solver_max_iter)

    def solve(self, source: np.ndarray, warm: bool = False) -> tuple[ScalarField, int]:
        """Solve for a full-grid source array; only in-set entries are read."""
        h = source[self.cells]
        if np.any(h < 0):
            raise ValueError("heat source must be non-negative")
        x, iters = self.solve_vector(h, self.last if warm else None)
        if warm:
            self.last = x
        values = np.zeros(self.region.shape)
        values[self.cells] = x
        T = ScalarField(self.region, self.cells, values, _fill_index=self.fill)
        return T, iters


class HeatSolver:
    """Per-cell-set operator cache with solve statistics.

    Warm starts reuse the previous solution on the same cell set, which keeps
    consecutive solves cheap while the source changes slowly.
    """

    def __init__(self, region: RegionGrid, params: FieldParams, warm_start: bool = True, cache_size: int = 64):
        self.region = region
        self.params = params
        self.warm_start = warm_start
        self.cache_size = cache_size
        self._cache: OrderedDict[bytes, HeatOperator] = OrderedDict()
        self.solves = 0
        self.iterations = 0

    def operator(self, cells: np.ndarray) -> HeatOperator:
        key = hashlib.sha1(np.packbits(cells).tobytes()).digest()
        op = self._cache.get(key)
        if op is None:
            op = HeatOperator(self.region, cells, self.params)
            self._cache[key] = op
            while len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        else:
            self._cache.move_to_end(key)
        return op

    def solve(self, cells: np.ndarray, source: np.ndarray) -> ScalarField:
        T, iters = self.operator(cells).solve(source, warm=self.warm_start)
        self.solves += 1
        self.iterations += iters
        return T

    def stats(self) -> dict:
        return {"solves": self.solves, "cg_iterations": self.iterations, "method": self.params.method}


def solve_heat_field(cells: np.ndarray, source: ScalarField, params: FieldParams) -> ScalarField:
    """One-off solve of the screened Poisson problem on ``cells``."""
    cells = np.asarray(cells, dtype=bool)
    if not cells.any():
        raise ValueError("cell set is empty")
    T, _ = HeatOperator(source.region, cells, params).solve(source.values)
    return T


def residual_norm(T: ScalarField, source: ScalarField, params: FieldParams) -> float:
    A, _ = assemble_operator(T.cells, T.region.spacing, params.alpha, params.beta)
    return float(np.linalg.norm(source.values[T.cells] - A @ T.values[T.cells]))


# ---------------------------------------------------------------------------
# maxima and curvature

_OFFSETS8 = [(dy, dx) for dy in (-1, 0, 1) for dx in (-1, 0, 1) if (dy, dx) != (0, 0)]


def _shifted(a: np.ndarray, dy: int, dx: int, fill):
    out = np.full_like(a, fill)
    ny, nx = a.shape
    ys_dst = slice(max(0, -dy), ny - max(0, dy))
    xs_dst = slice(max(0, -dx), nx - max(0, dx))
    ys_src = slice(max(0, dy), ny - max(0, -dy))
    xs_src = slice(max(0, dx), nx - max(0, -dx))
    out[ys_dst, xs_dst] = a[ys_src, xs_src]
    return out


def local_maxima_indices(T: ScalarField) -> np.ndarray:
    """Flat indices of local maxima, by descending value then index."""
    cells, v = T.cells, T.values
    if not cells.any():
        return np.zeros(0, dtype=np.int64)
    vals = v[cells]
    if vals.max() == vals.min():
        return np.zeros(0, dtype=np.int64)
    ge_all = cells.copy()
    gt_any = np.zeros_like(cells)
    for dy, dx in _OFFSETS8:
        nb = _shifted(v, dy, dx, 0.0)
        defined = _shifted(cells, dy, dx, False)
        ge_all &= ~defined | (v >= nb)
        gt_any |= defined & (v > nb)
    is_max = (ge_all & gt_any).ravel()
    flat = v.ravel()
    cand = np.flatnonzero(cells.ravel())
    top = cand[np.argmax(flat[cand])]
    is_max[top] = True
    idx = np.flatnonzero(is_max)
    order = np.lexsort((idx, -flat[idx]))
    return idx[order]


def local_maxima(T: ScalarField) -> list[np.ndarray]:
    return [T.region.center(i) for i in local_maxima_indices(T)]


def discrete_hessian(T: ScalarField, flat_index: int) -> Optional[np.ndarray]:
    """3x3-stencil Hessian at a cell, or None if the stencil leaves the set."""
    ny, nx = T.cells.shape
    iy, ix = divmod(int(flat_index), nx)
    if not (1 <= iy < ny - 1 and 1 <= ix < nx - 1):
        return None
    if not T.cells[iy - 1:iy + 2, ix - 1:ix + 2].all():
        return None
    v = T.values
    h2 = T.region.spacing ** 2
    fxx = (v[iy, ix + 1] - 2 * v[iy, ix] + v[iy, ix - 1]) / h2
    fyy = (v[iy + 1, ix] - 2 * v[iy, ix] + v[iy - 1, ix]) / h2
    fxy = (v[iy + 1, ix + 1] - v[iy + 1, ix - 1] - v[iy - 1, ix + 1] + v[iy - 1, ix - 1]) / (4 * h2)
    return np.array([[fxx, fxy], [fxy, fyy]])
