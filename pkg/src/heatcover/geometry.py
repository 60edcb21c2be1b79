"""Workspace grids, discrete Voronoi partitions and subregion triangulations.

All cell sets are boolean arrays of shape ``(ny, nx)`` laid over a
:class:`RegionGrid`.  Flat cell indices are row-major (``iy * nx + ix``) and
are used for every lowest-index tie-break.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial import Delaunay

Rect = tuple[float, float, float, float]  # xmin, ymin, xmax, ymax

_FOUR = ndimage.generate_binary_structure(2, 1)
_EIGHT = ndimage.generate_binary_structure(2, 2)


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class RegionSpec:
    outer: Rect
    holes: tuple[Rect, ...] = ()
    spacing: float = 0.1


@dataclass(eq=False)
class RegionGrid:
    origin: tuple[float, float]
    spacing: float
    nx: int
    ny: int
    mask: np.ndarray

    @property
    def cell_area(self) -> float:
        return self.spacing * self.spacing

    @property
    def shape(self) -> tuple[int, int]:
        return (self.ny, self.nx)

    @property
    def xc(self) -> np.ndarray:
        return self.origin[0] + (np.arange(self.nx) + 0.5) * self.spacing

    @property
    def yc(self) -> np.ndarray:
        return self.origin[1] + (np.arange(self.ny) + 0.5) * self.spacing

    def center_grids(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.xc, self.yc)

    def center(self, flat_index: int) -> np.ndarray:
        iy, ix = divmod(int(flat_index), self.nx)
        return np.array([self.xc[ix], self.yc[iy]])

    def cell_of(self, p) -> Optional[tuple[int, int]]:
        """Return ``(iy, ix)`` of the grid cell containing ``p`` or None off-grid."""
        ix = int(np.floor((p[0] - self.origin[0]) / self.spacing))
        iy = int(np.floor((p[1] - self.origin[1]) / self.spacing))
        if 0 <= ix < self.nx and 0 <= iy < self.ny:
            return iy, ix
        return None

    def contains(self, p, cells: Optional[np.ndarray] = None) -> bool:
        cells = self.mask if cells is None else cells
        c = self.cell_of(p)
        return c is not None and bool(cells[c])

    @property
    def area(self) -> float:
        return float(self.mask.sum()) * self.cell_area

    def integrate(self, values: np.ndarray, cells: Optional[np.ndarray] = None) -> float:
        """Midpoint-rule integral of a cell-centred array over ``cells``."""
        cells = self.mask if cells is None else cells
        return float(values[cells].sum()) * self.cell_area


def is_connected(cells: np.ndarray) -> bool:
    _, n = ndimage.label(cells, structure=_FOUR)
    return n == 1


def build_region(spec: RegionSpec) -> RegionGrid:
    """Rasterise an outer rectangle minus rectangular holes at ``spec.spacing``.

    A cell is in the workspace when its centre lies in the closed outer
    rectangle and in none of the closed holes.
    """
    h = float(spec.spacing)
    if not h > 0:
        raise GeometryError("grid spacing must be positive")
    xmin, ymin, xmax, ymax = map(float, spec.outer)
    if xmax <= xmin or ymax <= ymin:
        raise GeometryError("empty region: degenerate outer rectangle")
    nx = max(1, int(np.ceil((xmax - xmin) / h - 1e-9)))
    ny = max(1, int(np.ceil((ymax - ymin) / h - 1e-9)))
    grid = RegionGrid((xmin, ymin), h, nx, ny, np.zeros((ny, nx), bool))
    X, Y = grid.center_grids()
    mask = (X >= xmin) & (X <= xmax) & (Y >= ymin) & (Y <= ymax)
    for hx0, hy0, hx1, hy1 in spec.holes:
        mask &= ~((X >= hx0) & (X <= hx1) & (Y >= hy0) & (Y <= hy1))
    if not mask.any():
        raise GeometryError("empty region")
    if not is_connected(mask):
        raise GeometryError("disconnected region")
    grid.mask = mask
    return grid


# ---------------------------------------------------------------------------
# Voronoi partition


@dataclass(eq=False)
class Partition:
    labels: np.ndarray  # (ny, nx) int, -1 outside the workspace
    adjacency: np.ndarray  # (N, N) bool

    @property
    def n_agents(self) -> int:
        return self.adjacency.shape[0]

    def cells(self, i: int) -> np.ndarray:
        return self.labels == i

    def neighbors(self, i: int) -> list[int]:
        return [int(j) for j in np.flatnonzero(self.adjacency[i])]


def nearest_site_labels(region: RegionGrid, positions: np.ndarray) -> np.ndarray:
    X, Y = region.center_grids()
    xs, ys = X[region.mask], Y[region.mask]
    d2 = np.stack([(xs - sx) ** 2 + (ys - sy) ** 2 for sx, sy in positions])
    labels = np.full(region.shape, -1, dtype=np.int64)
    # argmin returns the first minimum: lowest agent index wins ties
    labels[region.mask] = np.argmin(d2, axis=0)
    return labels


def adjacency_from_labels(labels: np.ndarray, n: int) -> np.ndarray:
    adj = np.zeros((n, n), bool)
    for a, b in ((labels[:, :-1], labels[:, 1:]), (labels[:-1, :], labels[1:, :])):
        sel = (a >= 0) & (b >= 0) & (a != b)
        adj[a[sel], b[sel]] = True
    adj |= adj.T
    np.fill_diagonal(adj, False)
    return adj


def voronoi_labels(region: RegionGrid, positions: Sequence) -> Partition:
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    if len(positions) == 0:
        raise GeometryError("at least one agent position is required")
    for i, p in enumerate(positions):
        if not region.contains(p):
            raise GeometryError(f"agent {i} position {tuple(p)} is outside the workspace")
    labels = nearest_site_labels(region, positions)
    return Partition(labels, adjacency_from_labels(labels, len(positions)))


def reattach_orphans(region: RegionGrid, labels: np.ndarray, positions: np.ndarray) -> np.ndarray:
    """Make every subregion 4-connected and containing its own agent.

    Holes can split a Euclidean Voronoi cell; pieces not holding the agent
    can never be reached from inside the subregion.  Those cells are grown
    back, one ring at a time, into the adjacent subregion whose site is
    nearest (lowest index on ties).
    """
    labels = labels.copy()
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    orphan = np.zeros(labels.shape, bool)
    for i, p in enumerate(positions):
        own = labels == i
        if not own.any():
            continue
        comp, n = ndimage.label(own, structure=_FOUR)
        if n <= 1:
            continue
        home = comp[region.cell_of(p)]
        orphan |= own & (comp != home)
    if not orphan.any():
        return labels
    labels[orphan] = -2
    X, Y = region.center_grids()
    while orphan.any():
        best = np.full(labels.shape, np.inf)
        pick = np.full(labels.shape, -1, dtype=np.int64)
        for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            nb = np.full(labels.shape, -1, dtype=np.int64)
            src = labels[max(dy, 0): labels.shape[0] + min(dy, 0), max(dx, 0): labels.shape[1] + min(dx, 0)]
            nb[max(-dy, 0): labels.shape[0] + min(-dy, 0), max(-dx, 0): labels.shape[1] + min(-dx, 0)] = src
            ok = orphan & (nb >= 0)
            if not ok.any():
                continue
            j = nb[ok]
            d = (X[ok] - positions[j, 0]) ** 2 + (Y[ok] - positions[j, 1]) ** 2
            cur_d, cur_j = best[ok], pick[ok]
            better = (d < cur_d) | ((d == cur_d) & ((cur_j < 0) | (j < cur_j)))
            best[ok] = np.where(better, d, cur_d)
            pick[ok] = np.where(better, j, cur_j)
        grow = pick >= 0
        if not grow.any():
            raise GeometryError("orphan cells are not connected to any subregion")
        labels[grow] = pick[grow]
        orphan &= ~grow
    return labels


def connected_voronoi(region: RegionGrid, positions: Sequence) -> Partition:
    """Voronoi partition with split subregions reattached (see ``reattach_orphans``)."""
    base = voronoi_labels(region, positions)
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    labels = reattach_orphans(region, base.labels, positions)
    return Partition(labels, adjacency_from_labels(labels, len(positions)))


# ---------------------------------------------------------------------------
# Triangulation


@dataclass(frozen=True)
class Circle:
    center: tuple[float, float]
    radius: float


@dataclass(eq=False)
class TriMesh:
    vertices: np.ndarray  # (nv, 2)
    triangles: np.ndarray  # (nt, 3) int
    region: Optional[RegionGrid] = None
    cells: Optional[np.ndarray] = None
    cell_tri: Optional[np.ndarray] = None  # (ny, nx) owning triangle, -1 if none
    _bary: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        self.vertices = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        # rows map (p - a) to barycentric (l1, l2)
        m = np.stack([b - a, c - a], axis=-1)  # (nt, 2, 2)
        self._bary = np.linalg.inv(m) if len(m) else np.zeros((0, 2, 2))

    @property
    def h_max(self) -> float:
        if len(self.triangles) == 0:
            return 0.0
        return float(triangle_edges(self.vertices, self.triangles).max())

    def areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.abs((b - a)[:, 0] * (c - a)[:, 1] - (b - a)[:, 1] * (c - a)[:, 0])

    def barycentric(self, pts: np.ndarray) -> np.ndarray:
        """Barycentric coordinates of ``pts`` (k, 2) in every triangle -> (k, nt, 3)."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        a = self.vertices[self.triangles[:, 0]]
        d = pts[:, None, :] - a[None, :, :]
        l12 = np.einsum("tij,ktj->kti", self._bary, d)
        l0 = 1.0 - l12.sum(axis=-1)
        return np.concatenate([l0[..., None], l12], axis=-1)

    def contains(self, tri: int, p, tol: float = 1e-9) -> bool:
        lam = self.barycentric(np.asarray(p)[None, :])[0, tri]
        return bool(np.all(lam >= -tol))

    def triangle_cells(self, tri: int) -> np.ndarray:
        if self.cell_tri is None:
            raise GeometryError("mesh carries no cell map")
        return self.cell_tri == tri


def triangle_edges(vertices: np.ndarray, triangles: np.ndarray) -> np.ndarray:
    a, b, c = (vertices[triangles[:, k]] for k in range(3))
    return np.stack(
        [np.hypot(*(b - a).T), np.hypot(*(c - b).T), np.hypot(*(a - c).T)], axis=1
    )


def _locate_many(mesh: TriMesh, pts: np.ndarray, tol: float = 1e-9, chunk: int = 512) -> np.ndarray:
    out = np.full(len(pts), -1, dtype=np.int64)
    for s in range(0, len(pts), chunk):
        inside = np.all(mesh.barycentric(pts[s:s + chunk]) >= -tol, axis=-1)
        hit = inside.any(axis=1)
        out[s:s + chunk][hit] = np.argmax(inside[hit], axis=1)
    return out


def locate_triangle(mesh: TriMesh, p) -> Optional[int]:
    """Lowest-index triangle whose closed region contains ``p``."""
    if len(mesh.triangles) == 0:
        return None
    t = _locate_many(mesh, np.asarray(p, dtype=float).reshape(1, 2))[0]
    return None if t < 0 else int(t)


def triangulate_points(points, max_edge: Optional[float] = None) -> TriMesh:
    """Plain Delaunay triangulation of a point sample, dropping flat triangles
    and (if given) any triangle with an edge longer than ``max_edge``."""
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) < 3:
        raise GeometryError("at least 3 sample points are required")
    tris = Delaunay(pts).simplices.astype(np.int64)
    a, b, c = (pts[tris[:, k]] for k in range(3))
    area = 0.5 * np.abs((b - a)[:, 0] * (c - a)[:, 1] - (b - a)[:, 1] * (c - a)[:, 0])
    scale = np.ptp(pts, axis=0).max() or 1.0
    keep = area > 1e-12 * scale * scale
    if max_edge is not None:
        keep &= triangle_edges(pts, tris).max(axis=1) <= max_edge
    return TriMesh(pts, tris[keep])


def boundary_cells(cells: np.ndarray) -> np.ndarray:
    """Cells of the set with at least one 8-neighbour outside it (or off-grid)."""
    interior = ndimage.binary_erosion(cells, structure=_EIGHT, border_value=0)
    return cells & ~interior


def delaunay_triangulate(
    region: RegionGrid, cells: np.ndarray, max_edge: float, radius: float
) -> TriMesh:
    """Triangulate a subregion so that every edge is at most ``max_edge``.

    Samples are the cell centres on a lattice of stride
    ``floor(max_edge / (2 h))`` plus every boundary cell centre.  Triangles
    with an edge above ``max_edge`` or a centroid outside the set are dropped;
    cell centres left uncovered are added as samples and the set is
    re-triangulated.
    """
    if max_edge >= radius:
        raise GeometryError(
            f"max_edge={max_edge} must be below the coverage radius r={radius}: "
            "triangle capture would no longer imply full coverage"
        )
    h = region.spacing
    if max_edge < h * np.sqrt(2.0):
        raise GeometryError(f"max_edge={max_edge} is finer than the grid diagonal {h * np.sqrt(2):.4g}")
    cells = np.asarray(cells, bool)
    if not cells.any():
        raise GeometryError("cannot triangulate an empty cell set")
    stride = max(1, int(np.floor(max_edge / (2.0 * h) + 1e-9)))
    iy, ix = np.indices(region.shape)
    sample = cells & (((ix % stride) == 0) & ((iy % stride) == 0) | boundary_cells(cells))
    X, Y = region.center_grids()
    flat_cells = np.flatnonzero(cells)
    cell_pts = np.column_stack([X.ravel()[flat_cells], Y.ravel()[flat_cells]])

    for _ in range(8):
        sel = np.flatnonzero(sample)
        if len(sel) < 3:
            raise GeometryError("fewer than 3 sample points in subregion")
        pts = np.column_stack([X.ravel()[sel], Y.ravel()[sel]])
        try:
            mesh = triangulate_points(pts, max_edge=max_edge)
        except Exception as exc:  # collinear samples (qhull error)
            raise GeometryError(f"cannot triangulate subregion: {exc}") from exc
        cent = mesh.vertices[mesh.triangles].mean(axis=1)
        keep = np.array([cells[c] if (c := region.cell_of(q)) else False for q in cent], bool)
        mesh = TriMesh(mesh.vertices, mesh.triangles[keep])
        owner = _locate_many(mesh, cell_pts) if len(mesh.triangles) else np.full(len(cell_pts), -1)
        missing = owner < 0
        if not missing.any():
            break
        grown = sample.ravel().copy()
        grown[flat_cells[missing]] = True
        grown = grown.reshape(region.shape)
        if np.array_equal(grown, sample):
            break
        sample = grown
    cell_tri = np.full(region.shape, -1, dtype=np.int64)
    cell_tri.ravel()[flat_cells] = owner
    return TriMesh(mesh.vertices, mesh.triangles, region=region, cells=cells, cell_tri=cell_tri)


def min_cover_circle(mesh: TriMesh, tri: int, p) -> Circle:
    """Circle centred at ``p`` covering triangle ``tri`` (``p`` inside it)."""
    p = np.asarray(p, dtype=float)
    if not mesh.contains(tri, p):
        raise GeometryError(f"point {tuple(p)} is outside triangle {tri}")
    verts = mesh.vertices[mesh.triangles[tri]]
    radius = float(np.hypot(*(verts - p).T).max())
    assert radius <= mesh.h_max + 1e-9, "covering radius exceeds H_max"
    return Circle((float(p[0]), float(p[1])), radius)
