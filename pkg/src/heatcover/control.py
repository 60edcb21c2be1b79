"""Agent motion: normalised gradient ascent, real-time and frozen-field updates."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .coverage import AgentState, WorkloadField, heat_source
from .field import GRAD_EPS, HeatSolver, ScalarField, local_maxima_indices, sample_gradient
from .geometry import RegionGrid, TriMesh, locate_triangle

REALTIME = "realtime"
MAXIMAL = "maximal"


class ProjectionError(RuntimeError):
    pass


@dataclass(frozen=True)
class ControlSettings:
    eps_tri: float
    # frozen-field steps without progress before the fallback kicks in
    stall_steps: int = 40


@dataclass(eq=False)
class ControlMode:
    mode: str = REALTIME
    frozen_field: Optional[ScalarField] = None
    target_maxima: list = field(default_factory=list)  # flat cell indices
    captured_triangle: Optional[int] = None
    hold_cells: Optional[np.ndarray] = field(default=None, repr=False)
    done: bool = False
    solves: int = 0
    event: Optional[str] = None
    approach: bool = False
    best: float = -np.inf
    stall: int = 0
    skipped: set = field(default_factory=set)

    def __post_init__(self):
        if self.mode not in (REALTIME, MAXIMAL):
            raise ValueError(f"unknown control mode {self.mode!r}")
        if self.mode == REALTIME and self.frozen_field is not None:
            raise ValueError("real-time mode never carries a frozen field")

    @property
    def holding(self) -> bool:
        return self.hold_cells is not None

    def release(self):
        self.frozen_field = None
        self.target_maxima = []
        self.captured_triangle = None
        self.hold_cells = None
        self.approach = False


def control_input(T: ScalarField, s, V: float) -> np.ndarray:
    """Speed-``V`` move along the temperature gradient; zero when it vanishes."""
    if not V > 0:
        raise ValueError("speed must be positive")
    g = sample_gradient(T, s)
    n = float(np.hypot(g[0], g[1]))
    if n <= GRAD_EPS:
        return np.zeros(2)
    return V * g / n


def project_to_cells(region: RegionGrid, cells: np.ndarray, p, search: int = 2) -> np.ndarray:
    """Nearest point to ``p`` whose containing cell belongs to ``cells``.

    Only cells within ``search`` cells of ``p`` are considered.
    """
    p = np.asarray(p, dtype=float)
    if region.contains(p, cells):
        return p
    h = region.spacing
    ox, oy = region.origin
    ix = int(np.floor((p[0] - ox) / h))
    iy = int(np.floor((p[1] - oy) / h))
    inset = 1e-7 * h
    best, best_d, best_idx = None, np.inf, None
    for jy in range(iy - search, iy + search + 1):
        for jx in range(ix - search, ix + search + 1):
            if not (0 <= jx < region.nx and 0 <= jy < region.ny) or not cells[jy, jx]:
                continue
            lo = np.array([ox + jx * h, oy + jy * h])
            q = np.clip(p, lo + inset, lo + h - inset)
            d = float(np.hypot(*(q - p)))
            idx = jy * region.nx + jx
            if d < best_d or (d == best_d and idx < best_idx):
                best, best_d, best_idx = q, d, idx
    if best is None:
        raise ProjectionError(f"no cell of the agent's set within {search} cells of {tuple(p)}")
    return best


def project_anywhere(region: RegionGrid, cells: np.ndarray, p) -> np.ndarray:
    """Like :func:`project_to_cells` but searching the whole set."""
    p = np.asarray(p, dtype=float)
    if region.contains(p, cells):
        return p
    X, Y = region.center_grids()
    flat = np.flatnonzero(cells.ravel())
    if len(flat) == 0:
        raise ProjectionError("empty cell set")
    d = np.hypot(X.ravel()[flat] - p[0], Y.ravel()[flat] - p[1])
    return project_to_cells(region, cells, p, search=int(np.ceil(d.min() / region.spacing)) + 2)


def step_agent(a: AgentState, u, dt: float, region: RegionGrid, cells: Optional[np.ndarray] = None) -> AgentState:
    if not dt > 0:
        raise ValueError("dt must be positive")
    cells = a.cells if cells is None else cells
    u = np.asarray(u, dtype=float)
    if not u.any():
        return replace(a, position=a.position.copy())
    p = a.position + dt * u
    return replace(a, position=project_to_cells(region, cells, p))


def realtime_update_step(
    agent: AgentState, workload: WorkloadField, solver: HeatSolver, dt: float
) -> tuple[AgentState, np.ndarray]:
    """Re-solve the agent's field and move one step along its gradient."""
    if agent.cells is None or not agent.cells.any():
        return agent, np.zeros(2)
    h = heat_source(workload, agent.cells)
    T = solver.solve(agent.cells, h.values)
    u = control_input(T, agent.position, agent.speed)
    return step_agent(agent, u, dt, workload.region), u


def _reach(region: RegionGrid, cells: np.ndarray, p, r: float) -> np.ndarray:
    X, Y = region.center_grids()
    return cells & (np.hypot(X - p[0], Y - p[1]) <= r)


def _captured(mesh: TriMesh, tri: Optional[int], maxima, region: RegionGrid, p) -> Optional[tuple]:
    """(triangle, max index) if the agent sits in a triangle holding a maximum."""
    if tri is not None and maxima:
        pts = np.array([region.center(i) for i in maxima])
        lam = mesh.barycentric(pts)[:, tri, :]
        inside = np.flatnonzero(np.all(lam >= -1e-9, axis=1))
        if len(inside):
            return tri, maxima[inside[0]]
    c = region.cell_of(p)
    if c is not None:
        flat = c[0] * region.nx + c[1]
        if flat in maxima:
            t = int(mesh.cell_tri[c]) if mesh.cell_tri is not None else -1
            return (t if t >= 0 else None), flat
    return None


def _start_hold(mode: ControlMode, region: RegionGrid, mesh: TriMesh, agent: AgentState, tri, max_index):
    if tri is not None and mesh.cell_tri is not None:
        target = mesh.cell_tri == tri
    else:
        target = np.zeros(region.shape, bool)
    if max_index is not None:
        target.ravel()[max_index] = True
    mode.captured_triangle = tri
    mode.hold_cells = _reach(region, target & agent.cells, agent.position, agent.kernel.r)
    mode.event = "capture"


def maximal_update_step(
    agent: AgentState,
    mode: ControlMode,
    workload: WorkloadField,
    mesh: TriMesh,
    solver: HeatSolver,
    settings: ControlSettings,
    dt: float,
) -> tuple[AgentState, ControlMode, np.ndarray]:
    """One frozen-field step.

    The field is solved once and frozen; the agent climbs it until it enters
    a triangle holding a local maximum, then stays put until that triangle's
    workload within reach is cleared, after which the field is re-solved.
    """
    if mode.mode != MAXIMAL:
        raise ValueError("maximal_update_step needs a maximal-mode controller")
    region = workload.region
    zero = np.zeros(2)
    mode.event = None
    if agent.cells is None or not agent.cells.any():
        mode.done = True
        return agent, mode, zero

    if mode.holding:
        left = float(workload.values[mode.hold_cells].sum()) * region.cell_area
        if left > settings.eps_tri:
            return agent, mode, zero
        mode.release()
        mode.skipped.clear()
        mode.event = "release"

    if mode.frozen_field is None:
        h = heat_source(workload, agent.cells)
        T = solver.solve(agent.cells, h.values)
        mode.solves += 1
        maxima = [int(i) for i in local_maxima_indices(T) if int(i) not in mode.skipped]
        if not maxima:
            mode.done = True
            return agent, mode, zero
        mode.done = False
        mode.frozen_field = T
        mode.target_maxima = maxima
        mode.best = T.value_at(agent.position)
        mode.stall = 0
        mode.approach = False

    T = mode.frozen_field
    tri = locate_triangle(mesh, agent.position)
    hit = _captured(mesh, tri, mode.target_maxima, region, agent.position)
    if hit is not None:
        _start_hold(mode, region, mesh, agent, *hit)
        return agent, mode, zero

    target = region.center(mode.target_maxima[0])
    if mode.approach:
        d = target - agent.position
        n = float(np.hypot(*d))
        u = agent.speed * d / n if n > GRAD_EPS else zero
    else:
        u = control_input(T, agent.position, agent.speed)
    moved = step_agent(agent, u, dt, region) if u.any() else agent

    score = -float(np.hypot(*(target - moved.position))) if mode.approach else T.value_at(moved.position)
    if score > mode.best + 1e-12 * max(1.0, abs(mode.best)):
        mode.best, mode.stall = score, 0
    else:
        mode.stall += 1
    if not u.any() or mode.stall >= settings.stall_steps:
        if not mode.approach:
            # gradient ascent stalled off any listed maximum: head straight for the target
            mode.approach = True
            mode.best = -float(np.hypot(*(target - moved.position)))
            mode.stall = 0
        else:
            reach = _reach(region, agent.cells, moved.position, agent.kernel.r)
            if float(workload.values[reach].sum()) * region.cell_area > settings.eps_tri:
                mode.captured_triangle = locate_triangle(mesh, moved.position)
                mode.hold_cells = reach
                mode.event = "stall-capture"
            else:
                mode.skipped.add(mode.target_maxima[0])
                mode.release()
                mode.event = "skip-target"
    return moved, mode, u
