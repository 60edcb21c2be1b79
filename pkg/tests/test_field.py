import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heatcover.field import (
    FieldParams,
    HeatOperator,
    HeatSolver,
    ScalarField,
    SolverError,
    assemble_operator,
    discrete_hessian,
    local_maxima,
    local_maxima_indices,
    pcg,
    residual_norm,
    sample_gradient,
    solve_heat_field,
)
from heatcover.geometry import RegionSpec, build_region


def random_blob_mask(rng, ny, nx):
    """A connected random cell set: a rectangle with a few rectangular bites."""
    m = np.ones((ny, nx), bool)
    for _ in range(rng.integers(0, 4)):
        y0, x0 = rng.integers(0, ny - 2), rng.integers(0, nx - 2)
        m[y0:y0 + rng.integers(1, ny // 2), x0:x0 + rng.integers(1, nx // 2)] = False
    from scipy import ndimage

    lab, n = ndimage.label(m)
    if n == 0:
        return np.ones((ny, nx), bool)
    sizes = ndimage.sum(m, lab, range(1, n + 1))
    return lab == 1 + int(np.argmax(sizes))


def as_field(region, cells, values):
    v = np.zeros(region.shape)
    v[cells] = values[cells]
    return ScalarField(region, cells, v)


def test_operator_matches_dense_stencil():
    g = build_region(RegionSpec((0, 0, 1, 1), ((0.5, 0.5, 1, 1),), 0.25))
    A, index = assemble_operator(g.mask, 0.25, 2.0, 0.5)
    A = A.toarray()
    k = 2.0 / 0.25**2
    assert np.allclose(A, A.T)
    # each row: beta + k*degree on the diagonal, -k per in-set face, row sums = beta
    assert np.allclose(A.sum(axis=1), 0.5)
    corner = index[0, 0]
    assert A[corner, corner] == pytest.approx(0.5 + 2 * k)


def test_constant_source_gives_constant_field():
    g = build_region(RegionSpec((0, 0, 2, 2), ((1, 1, 2, 2),), 0.1))
    h = as_field(g, g.mask, np.full(g.shape, 3.0))
    T = solve_heat_field(g.mask, h, FieldParams(beta=2.0))
    assert np.allclose(T.values[g.mask], 1.5, atol=1e-8)


def test_zero_source_gives_zero_field():
    g = build_region(RegionSpec((0, 0, 2, 2), (), 0.1))
    T = solve_heat_field(g.mask, as_field(g, g.mask, np.zeros(g.shape)), FieldParams())
    assert np.abs(T.values).max() == 0.0


def test_negative_source_rejected():
    g = build_region(RegionSpec((0, 0, 1, 1), (), 0.25))
    with pytest.raises(ValueError, match="non-negative"):
        solve_heat_field(g.mask, as_field(g, g.mask, -np.ones(g.shape)), FieldParams())


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 100_000))
def test_integral_identity_and_positivity(seed):
    rng = np.random.default_rng(seed)
    g = build_region(RegionSpec((0, 0, 3, 2), (), 0.1))
    cells = random_blob_mask(rng, g.ny, g.nx)
    src = np.where(rng.random(g.shape) < 0.2, rng.random(g.shape), 0.0)
    params = FieldParams(alpha=rng.uniform(0.2, 3), beta=rng.uniform(0.2, 3))
    T = solve_heat_field(cells, as_field(g, cells, src), params)
    lhs = params.beta * T.values[cells].sum()
    rhs = src[cells].sum()
    assert lhs == pytest.approx(rhs, rel=1e-6)
    if rhs > 0:
        assert (T.values[cells] > 0).all()


def test_direct_and_cg_agree():
    g = build_region(RegionSpec((0, 0, 3, 3), ((1, 1, 2, 2),), 0.1))
    X, Y = g.center_grids()
    src = as_field(g, g.mask, np.exp(-((X - 0.5) ** 2 + (Y - 2.5) ** 2)))
    a = solve_heat_field(g.mask, src, FieldParams(method="cg"))
    b = solve_heat_field(g.mask, src, FieldParams(method="direct"))
    assert np.allclose(a.values, b.values, atol=1e-9)
    assert residual_norm(a, src, FieldParams()) <= 1e-10 * (np.linalg.norm(src.values[g.mask]) + 1)


def test_pcg_reports_non_convergence():
    g = build_region(RegionSpec((0, 0, 3, 3), (), 0.1))
    A, _ = assemble_operator(g.mask, 0.1, 1.0, 1.0)
    b = np.random.default_rng(0).random(A.shape[0])
    with pytest.raises(SolverError):
        pcg(A, b, A.diagonal(), np.zeros_like(b), 1e-14, 2)


def test_solver_cache_and_warm_start_reduce_iterations():
    g = build_region(RegionSpec((0, 0, 3, 3), (), 0.1))
    X, Y = g.center_grids()
    src = np.exp(-((X - 1) ** 2 + (Y - 1) ** 2))
    solver = HeatSolver(g, FieldParams())
    solver.solve(g.mask, src)
    first = solver.iterations
    solver.solve(g.mask, src * 0.999)
    assert solver.iterations - first < first
    assert solver.operator(g.mask) is solver.operator(g.mask.copy())
    assert solver.stats()["solves"] == 2


def bilinear_oracle(f, region, p):
    """Straight bilinear formula on a full-grid array of cell-centre values."""
    u = (p[0] - region.origin[0]) / region.spacing - 0.5
    w = (p[1] - region.origin[1]) / region.spacing - 0.5
    i, j = int(np.floor(u)), int(np.floor(w))
    tx, ty = u - i, w - j
    return (1 - ty) * ((1 - tx) * f[j, i] + tx * f[j, i + 1]) + ty * ((1 - tx) * f[j + 1, i] + tx * f[j + 1, i + 1])


def test_value_at_is_bilinear_and_exact_at_centres():
    g = build_region(RegionSpec((0, 0, 2, 2), (), 0.1))
    rng = np.random.default_rng(0)
    vals = rng.random(g.shape)
    T = ScalarField(g, g.mask, vals)
    assert T.value_at(g.center(37)) == pytest.approx(vals.ravel()[37])
    for p in rng.uniform(0.1, 1.9, (30, 2)):
        assert T.value_at(p) == pytest.approx(bilinear_oracle(vals, g, p), abs=1e-12)


def test_gradient_of_linear_field_is_exact():
    g = build_region(RegionSpec((0, 0, 2, 2), ((1, 1, 2, 2),), 0.1))
    X, Y = g.center_grids()
    T = as_field(g, g.mask, 3 * X - 2 * Y)
    rng = np.random.default_rng(1)
    for p in rng.uniform(0, 2, (200, 2)):
        if g.contains(p):
            assert np.allclose(sample_gradient(T, p), (3, -2), atol=1e-9)


def test_gradient_matches_finite_differences_inside_quads():
    g = build_region(RegionSpec((0, 0, 3, 3), (), 0.1))
    X, Y = g.center_grids()
    T = as_field(g, g.mask, np.sin(X) * np.cos(0.7 * Y) + 0.1 * X * Y)
    rng = np.random.default_rng(2)
    d = 1e-6
    for p in rng.uniform(0.1, 2.9, (100, 2)):
        gx = (T.value_at(p + (d, 0)) - T.value_at(p - (d, 0))) / (2 * d)
        gy = (T.value_at(p + (0, d)) - T.value_at(p - (0, d))) / (2 * d)
        fd = np.array([gx, gy])
        assert np.linalg.norm(sample_gradient(T, p) - fd) <= 1e-3 * np.linalg.norm(fd) + 1e-9


def test_gradient_near_set_boundary_points_inward_to_heat():
    g = build_region(RegionSpec((0, 0, 2, 2), (), 0.1))
    X, Y = g.center_grids()
    T = as_field(g, g.mask, np.exp(-((X - 1) ** 2 + (Y - 1) ** 2)))
    # in the half-cell band at the outer wall the sampled gradient still points at the peak
    gx, gy = sample_gradient(T, (0.02, 1.0))
    assert gx > 0 and abs(gy) < 1e-6


def test_local_maxima_two_bumps_sorted():
    g = build_region(RegionSpec((0, 0, 4, 2), (), 0.1))
    X, Y = g.center_grids()
    v = 2 * np.exp(-((X - 1) ** 2 + (Y - 1) ** 2) / 0.1) + np.exp(-((X - 3) ** 2 + (Y - 1) ** 2) / 0.1)
    T = as_field(g, g.mask, v)
    pts = local_maxima(T)
    assert len(pts) == 2
    assert np.allclose(pts[0], (0.95, 0.95)) or np.hypot(*(pts[0] - (1, 1))) < 0.1
    assert np.hypot(*(pts[1] - (3, 1))) < 0.1


def brute_maxima(T):
    ny, nx = T.cells.shape
    out = []
    for iy in range(ny):
        for ix in range(nx):
            if not T.cells[iy, ix]:
                continue
            v = T.values[iy, ix]
            nb = [
                T.values[iy + dy, ix + dx]
                for dy in (-1, 0, 1)
                for dx in (-1, 0, 1)
                if (dy or dx) and 0 <= iy + dy < ny and 0 <= ix + dx < nx and T.cells[iy + dy, ix + dx]
            ]
            if all(v >= n for n in nb) and any(v > n for n in nb):
                out.append(iy * nx + ix)
    return out


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 100_000))
def test_local_maxima_match_neighbour_scan(seed):
    rng = np.random.default_rng(seed)
    g = build_region(RegionSpec((0, 0, 2, 1.5), ((1, 0, 2, 0.5),), 0.25))
    vals = np.round(rng.random(g.shape) * 4) / 4  # plateaus on purpose
    T = as_field(g, g.mask, vals)
    got = set(local_maxima_indices(T).tolist())
    want = set(brute_maxima(T))
    flat = T.values.ravel()
    cand = np.flatnonzero(g.mask.ravel())
    if flat[cand].max() > flat[cand].min():
        want.add(int(cand[np.argmax(flat[cand])]))
    assert got == want


def test_constant_field_has_no_maxima():
    g = build_region(RegionSpec((0, 0, 1, 1), (), 0.25))
    assert len(local_maxima_indices(as_field(g, g.mask, np.ones(g.shape)))) == 0


def test_hessian_negative_definite_at_peak():
    g = build_region(RegionSpec((0, 0, 2, 2), (), 0.1))
    X, Y = g.center_grids()
    T = as_field(g, g.mask, np.exp(-((X - 1.05) ** 2 + (Y - 1.05) ** 2)))
    top = local_maxima_indices(T)[0]
    H = discrete_hessian(T, top)
    assert np.all(np.linalg.eigvalsh(H) < 0)
    assert discrete_hessian(T, 0) is None


def test_field_params_validation():
    for kw in ({"alpha": 0}, {"beta": -1}, {"solver_tol": 0}, {"method": "lu"}):
        with pytest.raises(ValueError):
            FieldParams(**kw)


def test_operator_direct_backend_caches_factor():
    g = build_region(RegionSpec((0, 0, 1, 1), (), 0.1))
    op = HeatOperator(g, g.mask, FieldParams(method="direct"))
    op.solve(np.ones(g.shape))
    lu = op._lu
    op.solve(2 * np.ones(g.shape))
    assert op._lu is lu
