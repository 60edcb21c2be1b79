import numpy as np
import pytest

from heatcover.coverage import CoverageKernel, GaussianTerm
from heatcover.field import FieldParams
from heatcover.geometry import RegionSpec
from heatcover.mission import MissionConfig, OutputSpec


def small_config(**kw) -> MissionConfig:
    """A 4 x 4 desk scenario on a coarse grid: two blobs, two agents."""
    base = dict(
        region=RegionSpec((0, 0, 4, 4), (), 0.2),
        mixture=[GaussianTerm(4.0, (1.0, 1.0), 0.5), GaussianTerm(2.0, (3.0, 3.0), 0.5)],
        positions=np.array([(0.5, 0.5), (3.5, 3.5)]),
        kernel=CoverageKernel(6.0, 1.0, 0.5),
        field=FieldParams(method="direct"),
        dt=0.1,
        T_u=5.0,
        k_max=3,
        eps_M=1e-3,
        max_steps=20_000,
        max_edge=0.45,
        output=OutputSpec(stride=1),
    )
    base.update(kw)
    return MissionConfig(**base)


@pytest.fixture
def small():
    return small_config


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
