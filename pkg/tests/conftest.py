import numpy as np
import pytest

from dpgrid.case import Generator, Line, MaintenanceSpec, PowerCase


def make_case(
    *,
    buses=("N1",),
    lines=(),
    gens=None,
    demand=None,
    horizon=2,
    window_hours=1,
    maintenance=None,
):
    """Small hand-rolled case for unit tests."""
    if gens is None:
        gens = (
            Generator("G1", buses[0], dispatch_cost=2.0, commitment_cost=5.0,
                      p_min=5.0, p_max=20.0, ramp=20.0, min_up=1, min_down=1),
        )
    if demand is None:
        demand = {b: tuple(10.0 for _ in range(horizon)) for b in buses}
    case = PowerCase(
        buses=tuple(buses),
        lines=tuple(lines),
        generators=tuple(gens),
        demand=demand,
        horizon=horizon,
        window_hours=window_hours,
        maintenance=maintenance or {},
    )
    case.validate()
    return case


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
