"""Mission orchestration: independent subregion coverage, iterative
re-partitioning with handoffs, and the shared-field baseline.

Every run is a synchronous lockstep loop.  Per step all controllers read the
same workload snapshot and move, then the workload is decayed once with the
new positions, then metrics are logged.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from .control import (
    MAXIMAL,
    REALTIME,
    ControlMode,
    ControlSettings,
    control_input,
    maximal_update_step,
    project_anywhere,
    realtime_update_step,
    step_agent,
)
from .coverage import (
    AgentState,
    CoverageKernel,
    GaussianTerm,
    WorkloadField,
    apply_coverage_step,
    coverage_speed,
    heat_source,
    initial_workload,
    optimal_time,
    total_workload,
)
from .field import FieldParams, HeatSolver
from .geometry import (
    GeometryError,
    Partition,
    RegionGrid,
    RegionSpec,
    build_region,
    delaunay_triangulate,
    connected_voronoi,
)

log = logging.getLogger(__name__)

ALGO1, ALGO3, CENTRALIZED = "algo1", "algo3", "centralized"
ALGORITHMS = (ALGO1, ALGO3, CENTRALIZED)


@dataclass(frozen=True)
class OutputSpec:
    directory: str = "out"
    artifacts: tuple[str, ...] = ("summary", "curve", "trajectory")
    stride: int = 10


@dataclass(eq=False)
class MissionConfig:
    region: RegionSpec
    mixture: list[GaussianTerm]
    positions: np.ndarray
    speed: float = 0.5
    kernel: CoverageKernel = CoverageKernel()
    field: FieldParams = FieldParams()
    algorithm: str = ALGO3
    dt: float = 0.1
    T_u: Union[float, list[float]] = 500.0
    k_max: int = 7
    eps_M: float = 1e-3
    max_steps: int = 100_000
    seed: int = 0
    max_edge: Optional[float] = None
    stall_steps: int = 1000
    output: OutputSpec = OutputSpec()

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 2)
        if len(self.positions) < 1:
            raise ValueError("N must be at least 1")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if self.eps_M < 0:
            raise ValueError("eps_M must be non-negative")
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}")
        for tu in self.T_u if isinstance(self.T_u, list) else [self.T_u]:
            if tu < 0:
                raise ValueError("T_u must be non-negative")
        if self.max_edge is not None and self.max_edge >= self.kernel.r:
            raise ValueError(f"max_edge={self.max_edge} must be below r={self.kernel.r}")

    @property
    def N(self) -> int:
        return len(self.positions)

    @property
    def mesh_edge(self) -> float:
        return self.max_edge if self.max_edge is not None else 0.9 * self.kernel.r

    def realtime_window(self, k: int) -> float:
        if isinstance(self.T_u, list):
            return float(self.T_u[min(k, len(self.T_u)) - 1])
        return float(self.T_u)


@dataclass(eq=False)
class MissionState:
    config: MissionConfig
    region: RegionGrid
    workload: WorkloadField
    agents: list[AgentState]
    solver: HeatSolver
    partition: Optional[Partition] = None
    modes: list[ControlMode] = field(default_factory=list)
    meshes: dict = field(default_factory=dict)
    steps: int = 0
    iter_steps: int = 0
    k: int = 1
    M: float = 0.0
    M_tracked: float = 0.0
    accounting_error: float = 0.0
    events: list = field(default_factory=list)
    curve: list = field(default_factory=list)
    trajectory: list = field(default_factory=list)
    iterations: list = field(default_factory=list)
    finished: bool = False
    completed: bool = False
    stop_reason: str = ""
    snapshots: list = field(default_factory=list)
    initial_values: Optional[np.ndarray] = None

    @property
    def t(self) -> float:
        return self.steps * self.config.dt

    @property
    def t_prime(self) -> float:
        return self.iter_steps * self.config.dt

    def event(self, kind: str, **detail):
        self.events.append((len(self.events), self.t, self.k, kind, detail))

    def region_loads(self) -> list[float]:
        if self.partition is None:
            return []
        return [total_workload(self.workload, self.partition.cells(i)) for i in range(len(self.agents))]


@dataclass
class RunSummary:
    algorithm: str
    completed: bool
    T: float
    T_star: float
    delta_T: float
    M0: float
    N: int
    steps: int
    M_curve: list
    iterations: list
    events: list
    trajectory: list
    solver_stats: dict
    accounting_error: float
    stop_reason: str = ""
    partitions: list = field(default_factory=list, repr=False)
    snapshots: list = field(default_factory=list, repr=False)
    initial_workload: Optional[np.ndarray] = field(default=None, repr=False)
    final_workload: Optional[np.ndarray] = field(default=None, repr=False)


# ---------------------------------------------------------------------------
# state set-up and the shared step


def init_state(config: MissionConfig, partitioned: bool = True) -> MissionState:
    region = build_region(config.region)
    workload = initial_workload(region, config.mixture)
    agents = [
        AgentState(i, p.copy(), config.speed, config.kernel) for i, p in enumerate(config.positions)
    ]
    for a in agents:
        if not region.contains(a.position):
            raise GeometryError(f"agent {a.id} starts outside the workspace")
    state = MissionState(
        config, region, workload, agents, HeatSolver(region, config.field),
        modes=[ControlMode() for _ in agents],
    )
    state.M = state.M_tracked = workload.initial_total
    state.initial_values = workload.values.copy()
    if partitioned:
        _repartition(state)
    else:
        for a in agents:
            a.cells = region.mask
    state.event("start", M0=state.M, N=len(agents))
    _log_step(state, [np.zeros(2)] * len(agents), ["start"] * len(agents))
    return state


def _repartition(state: MissionState):
    region = state.region
    state.partition = connected_voronoi(region, [a.position for a in state.agents])
    for a in state.agents:
        a.cells = state.partition.cells(a.id)
        if a.cells.any() and not region.contains(a.position, a.cells):
            a.position = project_anywhere(region, a.cells, a.position)
    state.modes = [ControlMode() for _ in state.agents]
    state.meshes = {}
    state.iterations.append({"k": state.k, "t_start": state.t, "partition": state.partition.labels.copy()})
    if "fields" in state.config.output.artifacts:
        for a in state.agents:
            if a.cells.any():
                T = state.solver.operator(a.cells).solve(heat_source(state.workload, a.cells).values)[0]
                state.snapshots.append((state.k, a.id, state.t, T))


def _log_step(state: MissionState, controls, labels):
    loads = state.region_loads()
    state.curve.append((state.t, state.M, *loads))
    for a, u, lab in zip(state.agents, controls, labels):
        state.trajectory.append(
            (state.t, state.k, a.id, float(a.position[0]), float(a.position[1]), lab, float(np.hypot(*u)))
        )


def _advance(state: MissionState, controls, labels):
    removed = apply_coverage_step(state.workload, state.agents, state.config.dt)
    state.steps += 1
    state.iter_steps += 1
    state.M_tracked -= removed
    state.M = total_workload(state.workload)
    if state.M > 0:
        state.accounting_error = max(state.accounting_error, abs(state.M_tracked - state.M) / max(state.M, 1e-300))
    _log_step(state, controls, labels)


def _done(state: MissionState) -> bool:
    if state.M <= state.config.eps_M:
        state.finished = state.completed = True
        state.stop_reason = "completed"
        state.event("complete", M=state.M)
        return True
    if state.steps >= state.config.max_steps:
        state.finished = True
        state.stop_reason = "max_steps"
        state.event("max-steps", M=state.M)
        return True
    return False


def _run_independent(state: MissionState) -> bool:
    """Real-time control on fixed subregions until the whole region is clear."""
    cfg = state.config
    last, idle = state.M, 0
    while not _done(state):
        new, us = [], []
        for a in state.agents:
            a2, u = realtime_update_step(a, state.workload, state.solver, cfg.dt)
            new.append(a2)
            us.append(u)
        state.agents = new
        _advance(state, us, [REALTIME] * len(new))
        if state.M < last:
            last, idle = state.M, 0
        else:
            idle += 1
            if idle >= cfg.stall_steps:
                state.finished = True
                state.stop_reason = "stalled"
                state.event("stall", M=state.M, steps=idle)
                break
    return state.completed


def _summarize(state: MissionState, algorithm: str) -> RunSummary:
    cfg = state.config
    T_star = optimal_time(state.workload.initial_total, cfg.N, coverage_speed(cfg.kernel))
    T = state.t
    return RunSummary(
        algorithm=algorithm,
        completed=state.completed,
        T=T,
        T_star=T_star,
        delta_T=T - T_star,
        M0=state.workload.initial_total,
        N=cfg.N,
        steps=state.steps,
        M_curve=state.curve,
        iterations=[{k: v for k, v in it.items() if k != "partition"} for it in state.iterations],
        events=state.events,
        trajectory=state.trajectory,
        solver_stats=state.solver.stats(),
        accounting_error=state.accounting_error,
        stop_reason=state.stop_reason,
        partitions=[(it["k"], it["partition"]) for it in state.iterations if "partition" in it],
        snapshots=state.snapshots,
        initial_workload=state.initial_values,
        final_workload=state.workload.values.copy(),
    )


# ---------------------------------------------------------------------------
# algorithms


def run_algo1(config: MissionConfig) -> RunSummary:
    """One Voronoi partition, then real-time heat-field control until done."""
    state = init_state(config)
    _run_independent(state)
    return _summarize(state, ALGO1)


def _region_thresholds(state: MissionState) -> list[float]:
    area = state.region.area
    return [
        state.config.eps_M * (float(a.cells.sum()) * state.region.cell_area) / area for a in state.agents
    ]


def _finishers(state: MissionState, eps: Sequence[float]) -> list[int]:
    return [i for i, (m, e) in enumerate(zip(state.region_loads(), eps)) if m <= e]


def run_algo2_iteration(state: MissionState, config: Optional[MissionConfig] = None) -> tuple[MissionState, Optional[int]]:
    """Run one iteration until the first agent clears its subregion.

    Returns the finisher (lowest id on ties), or None when the mission
    finished or hit ``max_steps`` inside the iteration.
    """
    cfg = config or state.config
    region = state.region
    settings = ControlSettings(eps_tri=1e-6 * region.cell_area * cfg.kernel.P)
    eps = _region_thresholds(state)
    T_u = cfg.realtime_window(state.k)
    state.event("iteration-start", k=state.k)
    last, idle = state.M, 0
    while True:
        if _done(state):
            state.iterations[-1].update(t_end=state.t, finisher=None)
            return state, None
        done = _finishers(state, eps)
        if done:
            fin = done[0]
            state.event("iteration-end", k=state.k, finisher=fin)
            state.iterations[-1].update(t_end=state.t, finisher=fin)
            return state, fin
        realtime = state.t_prime <= T_u + 1e-9 * cfg.dt
        new, us, labels = [], [], []
        for a, mode in zip(state.agents, state.modes):
            if not realtime and mode.mode == REALTIME and a.id not in state.meshes:
                try:
                    state.meshes[a.id] = delaunay_triangulate(region, a.cells, cfg.mesh_edge, cfg.kernel.r)
                    state.modes[a.id] = mode = ControlMode(MAXIMAL)
                    state.event("maximal-start", agent=a.id)
                except GeometryError as exc:
                    state.meshes[a.id] = None
                    state.event("mesh-failed", agent=a.id, reason=str(exc))
            if mode.mode == MAXIMAL:
                a2, mode, u = maximal_update_step(a, mode, state.workload, state.meshes[a.id], state.solver, settings, cfg.dt)
                if mode.event:
                    state.event(mode.event, agent=a.id, triangle=mode.captured_triangle)
                labels.append("hold" if mode.holding else MAXIMAL)
            else:
                a2, u = realtime_update_step(a, state.workload, state.solver, cfg.dt)
                labels.append(REALTIME)
            new.append(a2)
            us.append(u)
        state.agents = new
        _advance(state, us, labels)
        if state.M < last:
            last, idle = state.M, 0
        else:
            idle += 1
            if idle >= cfg.stall_steps:
                loads = state.region_loads()
                fin = int(np.argmin(loads))
                state.event("iteration-stall", k=state.k, finisher=fin, steps=idle)
                state.iterations[-1].update(t_end=state.t, finisher=fin, stalled=True)
                return state, fin


def handoff(state: MissionState, finisher: int, config: Optional[MissionConfig] = None) -> MissionState:
    """Move the finisher to the richest neighbouring subregion and re-partition."""
    w = state.workload
    w.iteration_initial = w.values.copy()
    part = state.partition
    loads = state.region_loads()
    i = finisher
    candidates = [j for j in part.neighbors(i) if loads[j] > 0]
    fallback = False
    if not candidates:
        candidates = [j for j in range(len(loads)) if j != i and loads[j] > 0]
        fallback = True
    if candidates:
        j = max(candidates, key=lambda j: (loads[j], -j))
        vals = np.where(part.cells(j), w.values, -np.inf).ravel()
        occupied = {tuple(a.position) for a in state.agents if a.id != i}
        for c in np.argsort(-vals, kind="stable"):
            p = state.region.center(c)
            if tuple(p) not in occupied:
                break
        state.agents[i].position = p
        state.event("handoff", agent=i, to_region=j, position=(float(p[0]), float(p[1])), fallback=fallback)
        state.iterations[-1].update(target_region=j)
    state.k += 1
    state.iter_steps = 0
    _repartition(state)
    return state


def run_algo3(config: MissionConfig) -> RunSummary:
    """Iterate partition, coverage and handoff; fixed subregions from ``k_max`` on."""
    state = init_state(config)
    while not state.finished:
        if _done(state):
            break
        if state.k < config.k_max:
            state, fin = run_algo2_iteration(state, config)
            if fin is not None and not state.finished:
                handoff(state, fin, config)
        else:
            state.event("final-phase", k=state.k)
            _run_independent(state)
    return _summarize(state, ALGO3)


def run_centralized(config: MissionConfig) -> RunSummary:
    """Baseline: one field over the whole region shared by every agent."""
    state = init_state(config, partitioned=False)
    region, cfg = state.region, config
    last, idle = state.M, 0
    while not _done(state):
        h = heat_source(state.workload, region.mask)
        T = state.solver.solve(region.mask, h.values)
        new, us = [], []
        for a in state.agents:
            u = control_input(T, a.position, a.speed)
            new.append(step_agent(a, u, cfg.dt, region))
            us.append(u)
        state.agents = new
        _advance(state, us, ["central"] * len(new))
        if state.M < last:
            last, idle = state.M, 0
        else:
            idle += 1
            if idle >= cfg.stall_steps:
                state.finished = True
                state.stop_reason = "stalled"
                state.event("stall", M=state.M, steps=idle)
                break
    return _summarize(state, CENTRALIZED)


RUNNERS = {ALGO1: run_algo1, ALGO3: run_algo3, CENTRALIZED: run_centralized}


def run(config: MissionConfig, algorithm: Optional[str] = None) -> RunSummary:
    return RUNNERS[algorithm or config.algorithm](config)
