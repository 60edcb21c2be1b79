"""Workload model: coverage kernel, workload decay, totals and timing bounds."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .field import ScalarField
from .geometry import RegionGrid


@dataclass(frozen=True)
class CoverageKernel:
    P: float = 6.0
    lam: float = 1.0
    r: float = 0.5

    def __post_init__(self):
        for name in ("P", "lam", "r"):
            if not getattr(self, name) > 0:
                label = "lambda" if name == "lam" else name
                raise ValueError(f"{label} must be positive")


@dataclass(frozen=True)
class GaussianTerm:
    """One ``amplitude * exp(-|x - center|^2 / width)`` term."""

    amplitude: float
    center: tuple[float, float]
    width: float


@dataclass(eq=False)
class WorkloadField:
    region: RegionGrid
    values: np.ndarray
    initial_total: float
    # workload at the start of the current iteration, used to normalise heat sources
    iteration_initial: np.ndarray = None

    def __post_init__(self):
        if self.iteration_initial is None:
            self.iteration_initial = self.values.copy()

    @property
    def field(self) -> ScalarField:
        return ScalarField(self.region, self.region.mask, self.values)

    def copy(self) -> "WorkloadField":
        return WorkloadField(self.region, self.values.copy(), self.initial_total, self.iteration_initial.copy())


@dataclass(eq=False)
class AgentState:
    id: int
    position: np.ndarray
    speed: float
    kernel: CoverageKernel
    cells: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        if not self.speed > 0:
            raise ValueError("agent speed must be positive")


def initial_workload(region: RegionGrid, mixture: Sequence[GaussianTerm]) -> WorkloadField:
    X, Y = region.center_grids()
    m = np.zeros(region.shape)
    for term in mixture:
        if term.amplitude < 0:
            raise ValueError("mixture amplitudes must be non-negative")
        if not term.width > 0:
            raise ValueError("mixture widths must be positive")
        cx, cy = term.center
        m += term.amplitude * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / term.width)
    m[~region.mask] = 0.0
    return WorkloadField(region, m, region.integrate(m))


def kernel_eval(k: CoverageKernel, d):
    """Clearing rate at distance ``d``; zero beyond the coverage radius."""
    d = np.asarray(d, dtype=float)
    if np.any(d < 0):
        raise ValueError("distance must be non-negative")
    out = np.where(d <= k.r, k.P * np.exp(-k.lam * d), 0.0)
    return float(out) if out.ndim == 0 else out


def _window(region: RegionGrid, p, r: float):
    h = region.spacing
    ix0 = max(0, int(np.floor((p[0] - r - region.origin[0]) / h - 0.5)))
    ix1 = min(region.nx, int(np.ceil((p[0] + r - region.origin[0]) / h - 0.5)) + 1)
    iy0 = max(0, int(np.floor((p[1] - r - region.origin[1]) / h - 0.5)))
    iy1 = min(region.ny, int(np.ceil((p[1] + r - region.origin[1]) / h - 0.5)) + 1)
    return slice(iy0, max(iy0, iy1)), slice(ix0, max(ix0, ix1))


def coverage_rate(region: RegionGrid, agents: Sequence[AgentState]) -> np.ndarray:
    """Summed kernel rate of all agents at every cell centre (full grid)."""
    rate = np.zeros(region.shape)
    xc, yc = region.xc, region.yc
    for a in agents:
        ys, xs = _window(region, a.position, a.kernel.r)
        d = np.hypot(xc[xs][None, :] - a.position[0], yc[ys][:, None] - a.position[1])
        rate[ys, xs] += kernel_eval(a.kernel, d)
    rate[~region.mask] = 0.0
    return rate


def apply_coverage_step(w: WorkloadField, agents: Sequence[AgentState], dt: float) -> float:
    """Advance the workload in place by one explicit Euler step.

    Returns the amount of workload removed (integrated over the region).
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if not agents:
        return 0.0
    rate = coverage_rate(w.region, agents)
    touched = rate > 0
    before = w.values[touched]
    after = np.maximum(0.0, before - dt * rate[touched])
    w.values[touched] = after
    return float((before - after).sum()) * w.region.cell_area


def total_workload(w: WorkloadField, cells: Optional[np.ndarray] = None) -> float:
    return w.region.integrate(w.values, cells)


def coverage_speed(k: CoverageKernel) -> float:
    """Kernel integral over its disc, ``2 pi P (1 - e^{-lr}(1 + lr)) / l^2``."""
    x = k.lam * k.r
    if x < 1e-2:
        # series of (1 - e^-x (1 + x)) / x^2, avoids cancellation as lambda -> 0
        s = sum((-1) ** n * (n - 1) * x ** (n - 2) / math.factorial(n) for n in range(2, 14))
        return 2.0 * math.pi * k.P * k.r * k.r * s
    return 2.0 * math.pi * k.P * (1.0 - math.exp(-x) * (1.0 + x)) / (k.lam * k.lam)


def coverage_speed_quadrature(k: CoverageKernel, h: float = 0.005) -> float:
    n = int(np.ceil(k.r / h))
    u = (np.arange(-n, n) + 0.5) * h
    d = np.hypot(u[None, :], u[:, None])
    return float(kernel_eval(k, d).sum()) * h * h


def optimal_time(M0: float, N: int, v: float) -> float:
    if N < 1:
        raise ValueError("N must be at least 1")
    if not v > 0:
        raise ValueError("coverage speed must be positive")
    return M0 / (N * v)


def heat_source(w: WorkloadField, cells: np.ndarray) -> ScalarField:
    """Workload on ``cells`` normalised by the iteration's initial maximum there."""
    cells = np.asarray(cells, dtype=bool)
    if not cells.any():
        raise ValueError("cell set is empty")
    mbar = float(w.iteration_initial[cells].max())
    values = np.zeros(w.region.shape)
    if mbar > 1e-12:
        values[cells] = w.values[cells] / mbar
    return ScalarField(w.region, cells, values)
