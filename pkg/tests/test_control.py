import numpy as np
import pytest

from heatcover.control import (
    MAXIMAL,
    REALTIME,
    ControlMode,
    ControlSettings,
    ProjectionError,
    control_input,
    maximal_update_step,
    project_to_cells,
    realtime_update_step,
    step_agent,
)
from heatcover.coverage import AgentState, CoverageKernel, GaussianTerm, apply_coverage_step, initial_workload, kernel_eval
from heatcover.field import FieldParams, HeatSolver, ScalarField
from heatcover.geometry import RegionSpec, build_region, delaunay_triangulate, locate_triangle

K = CoverageKernel(6.0, 1.0, 0.5)


def linear_field(g, gx, gy):
    X, Y = g.center_grids()
    return ScalarField(g, g.mask, np.where(g.mask, gx * X + gy * Y, 0.0))


def test_control_input_normalises():
    g = build_region(RegionSpec((0, 0, 2, 2), (), 0.1))
    u = control_input(linear_field(g, 3, 4), (1.0, 1.0), 0.5)
    assert np.allclose(u, (0.3, 0.4))
    assert np.hypot(*u) == pytest.approx(0.5, abs=1e-9)
    assert not control_input(linear_field(g, 0, 0), (1.0, 1.0), 0.5).any()


def test_step_agent_plain_euler_and_hold():
    g = build_region(RegionSpec((0, 0, 2, 2), (), 0.1))
    a = AgentState(0, (1.0, 1.0), 0.5, K, cells=g.mask)
    assert np.allclose(step_agent(a, (0.3, 0.4), 0.1, g).position, (1.03, 1.04))
    assert np.array_equal(step_agent(a, (0, 0), 0.1, g).position, a.position)


def brute_projection(g, cells, p):
    best, bd = None, np.inf
    h = g.spacing
    for iy in range(g.ny):
        for ix in range(g.nx):
            if not cells[iy, ix]:
                continue
            lo = np.array([g.origin[0] + ix * h, g.origin[1] + iy * h])
            q = np.clip(p, lo, lo + h)
            d = np.hypot(*(q - p))
            if d < bd:
                best, bd = q, d
    return best, bd


def test_projection_matches_exhaustive_search():
    g = build_region(RegionSpec((0, 0, 3, 3), (), 0.1))
    cells = g.mask.copy()
    X, _ = g.center_grids()
    cells &= X < 1.5
    rng = np.random.default_rng(0)
    for _ in range(100):
        p = rng.uniform(0, 3, 2)
        p[0] = rng.uniform(1.5, 1.69)
        q = project_to_cells(g, cells, p)
        _, d = brute_projection(g, cells, p)
        assert g.contains(q, cells)
        assert np.hypot(*(q - p)) == pytest.approx(d, abs=1e-6)
        assert np.hypot(*(q - p)) <= 2 * g.spacing


def test_projection_failure_far_from_set():
    g = build_region(RegionSpec((0, 0, 3, 3), (), 0.1))
    cells = np.zeros(g.shape, bool)
    cells[0, 0] = True
    with pytest.raises(ProjectionError):
        project_to_cells(g, cells, (2.5, 2.5))


def test_step_never_leaves_subregion():
    g = build_region(RegionSpec((0, 0, 3, 3), (), 0.1))
    X, _ = g.center_grids()
    cells = X < 1.5
    a = AgentState(0, (1.45, 1.0), 0.5, K, cells=cells)
    for _ in range(10):
        a = step_agent(a, (0.5, 0.0), 0.1, g)
        assert g.contains(a.position, cells)


def single_peak(spacing=0.1, size=10.0, peak=(5.0, 5.0)):
    g = build_region(RegionSpec((0, 0, size, size), (), spacing))
    w = initial_workload(g, [GaussianTerm(10.0, peak, 2.0)])
    return g, w


def test_realtime_descends_distance_to_peak():
    g, w = single_peak()
    solver = HeatSolver(g, FieldParams())
    a = AgentState(0, (2.0, 3.0), 0.5, K, cells=g.mask)
    d0 = np.hypot(*(a.position - (5, 5)))
    prev = d0
    for _ in range(40):
        a, u = realtime_update_step(a, w, solver, 0.1)
        d = np.hypot(*(a.position - (5, 5)))
        assert d <= prev + 1e-9
        prev = d
    assert prev < d0 - 1.5


def test_realtime_zero_workload_holds_still():
    g, w = single_peak()
    w.values[:] = 0.0
    solver = HeatSolver(g, FieldParams())
    a = AgentState(0, (2.0, 3.0), 0.5, K, cells=g.mask)
    a2, u = realtime_update_step(a, w, solver, 0.1)
    assert not u.any() and np.array_equal(a2.position, a.position)


def test_realtime_dt_convergence():
    g, w = single_peak()
    runs = []
    for dt in (0.1, 0.05):
        solver = HeatSolver(g, FieldParams())
        a = AgentState(0, (2.0, 3.0), 0.5, K, cells=g.mask)
        for _ in range(int(round(2.0 / dt))):
            a, _ = realtime_update_step(a, w, solver, dt)
        runs.append(a.position)
    assert np.hypot(*(runs[0] - runs[1])) < 0.1


def test_control_mode_invariants():
    with pytest.raises(ValueError):
        ControlMode("other")
    g, _ = single_peak(0.5)
    with pytest.raises(ValueError):
        ControlMode(REALTIME, frozen_field=linear_field(g, 1, 0))


def run_maximal(agent, w, mesh, steps, dt=0.1):
    solver = HeatSolver(w.region, FieldParams())
    mode = ControlMode(MAXIMAL)
    settings = ControlSettings(eps_tri=1e-6 * w.region.cell_area * agent.kernel.P)
    log = []
    for n in range(steps):
        agent, mode, u = maximal_update_step(agent, mode, w, mesh, solver, settings, dt)
        log.append((n, agent.position.copy(), mode.event, mode.captured_triangle, mode.holding, u))
        apply_coverage_step(w, [agent], dt)
        if mode.done:
            break
    return agent, mode, solver, log


def test_frozen_field_reaches_peak_triangle_and_covers_it():
    g, w = single_peak()
    mesh = delaunay_triangulate(g, g.mask, 0.45, 0.5)
    a = AgentState(0, (1.0, 5.0), 0.5, K, cells=g.mask)
    a, mode, solver, log = run_maximal(a, w, mesh, 200)
    capture = next(row for row in log if row[2] == "capture")
    n, pos, _, tri, _, _ = capture
    assert n * 0.1 <= 20.0
    verts = mesh.vertices[mesh.triangles[tri]]
    assert mesh.triangles.shape[0] > 0
    assert np.hypot(*(verts - pos).T).max() < 0.5
    assert all(kernel_eval(K, float(np.hypot(*(v - pos)))) > 0 for v in verts)
    assert np.hypot(*(pos - (5, 5))) < 0.5


def test_frozen_field_is_not_resolved_while_climbing():
    g, w = single_peak()
    mesh = delaunay_triangulate(g, g.mask, 0.45, 0.5)
    a = AgentState(0, (1.0, 5.0), 0.5, K, cells=g.mask)
    solver = HeatSolver(g, FieldParams())
    mode = ControlMode(MAXIMAL)
    settings = ControlSettings(eps_tri=1e-9)
    a, mode, _ = maximal_update_step(a, mode, w, mesh, solver, settings, 0.1)
    frozen = mode.frozen_field.values.tobytes()
    for _ in range(20):
        a, mode, u = maximal_update_step(a, mode, w, mesh, solver, settings, 0.1)
        assert np.hypot(*u) == pytest.approx(0.5)
    assert mode.frozen_field.values.tobytes() == frozen
    assert solver.solves == 1


def test_clear_triangle_releases_immediately():
    g, w = single_peak(0.1, 4.0, (2.0, 2.0))
    mesh = delaunay_triangulate(g, g.mask, 0.45, 0.5)
    a = AgentState(0, (2.0, 2.0), 0.5, K, cells=g.mask)
    solver = HeatSolver(g, FieldParams())
    mode = ControlMode(MAXIMAL)
    settings = ControlSettings(eps_tri=1e-6)
    a, mode, u = maximal_update_step(a, mode, w, mesh, solver, settings, 0.1)
    assert mode.event == "capture" and mode.holding and not u.any()
    w.values[mode.hold_cells] = 0.0
    a, mode, u = maximal_update_step(a, mode, w, mesh, solver, settings, 0.1)
    assert solver.solves == 2  # released and re-solved in the same call


def test_empty_workload_signals_done():
    g, w = single_peak(0.1, 4.0, (2.0, 2.0))
    w.values[:] = 0
    mesh = delaunay_triangulate(g, g.mask, 0.45, 0.5)
    a = AgentState(0, (1.0, 1.0), 0.5, K, cells=g.mask)
    solver = HeatSolver(g, FieldParams())
    _, mode, u = maximal_update_step(a, ControlMode(MAXIMAL), w, mesh, solver, ControlSettings(1e-6), 0.1)
    assert mode.done and not u.any()


def test_maximal_clears_single_peak():
    g, w = single_peak(0.1, 4.0, (2.0, 2.0))
    mesh = delaunay_triangulate(g, g.mask, 0.45, 0.5)
    a = AgentState(0, (0.5, 0.5), 0.5, K, cells=g.mask)
    a, mode, solver, log = run_maximal(a, w, mesh, 6000)
    assert mode.done
    assert w.values.sum() * g.cell_area < 1e-3
    # solves happen only at freeze boundaries
    assert solver.solves < len(log)
    assert all(np.hypot(*row[5]) in (0.0, pytest.approx(0.5)) for row in log)
