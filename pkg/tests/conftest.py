"""Shared fixtures; the expensive flow runs happen once per session."""

import numpy as np
import pytest

from riccilab.flow import FlowConfig, dumbbell_profile, evolve, exact_history
from riccilab.geometry import Topology, WarpedMetric
from riccilab.solutions import ExactFamily, make_exact_flow


@pytest.fixture(scope="session")
def exact_sphere():
    return exact_history(make_exact_flow(ExactFamily.SPHERE, 3, 1.0, grid_points=801))

@pytest.fixture(scope="session")
def exact_cylinder():
    return exact_history(
        make_exact_flow(ExactFamily.CYLINDER, 3, 1.0, grid_points=401, axis_extent=8.0)
    )

@pytest.fixture(scope="session")
def exact_flat():
    return exact_history(
        make_exact_flow(ExactFamily.GAUSSIAN, 3, 1.0, grid_points=401, axis_extent=8.0),
        t_end=1.0,
    )

@pytest.fixture(scope="session")
def sphere_run():
    flow = make_exact_flow(ExactFamily.SPHERE, 3, 1.0, grid_points=801)
    return evolve(flow.metric_at(0.0), FlowConfig(stop_sup_riem=1e6, min_points=801))

@pytest.fixture(scope="session")
def cylinder_run():
    m = 513
    x = np.linspace(0.0, 2.0 * np.pi, m)
    r0 = np.sqrt(2.0)
    initial = WarpedMetric(3, Topology.CYLINDER_PERIODIC, x, np.full(m, r0), time=0.0, xi=x)
    return evolve(initial, FlowConfig(stop_sup_riem=1e6, min_points=257))

@pytest.fixture(scope="session")
def neckpinch_run():
    initial = dumbbell_profile(3, grid_points=1201)
    cfg = FlowConfig(
        stop_sup_riem=1e7,
        min_points=601,
        step_rtol=1e-6,
        resolution_alpha=0.1,
        regrid_ratio=1.25,
    )
    return evolve(initial, cfg)
