import math

import numpy as np
import pytest

from riccilab.flow import (
    FlowConfig,
    dumbbell_profile,
    estimate_singular_time,
    evolve,
    exact_history,
    type_one_constants,
    volume_identity_residuals,
)
from riccilab.flow import _advance
from riccilab.geometry import Topology, WarpedMetric, curvature_from_profile
from riccilab.solutions import ExactFamily, make_exact_flow


def test_sphere_run_matches_closed_form(sphere_run):
    assert sphere_run.status == "singularity-reached"
    worst = 0.0
    for snap in sphere_run.snapshots:
        tau = 1.0 - snap.t
        if tau < 1e-3:
            continue
        r = math.sqrt(4.0 * tau)
        exact = r * np.sin(snap.xi / 2.0)
        worst = max(worst, float(np.max(np.abs(snap.psi - exact)) / r))
    assert worst <= 1e-4
    assert abs(sphere_run.T_hat - 1.0) <= 1e-4


def test_cylinder_run_matches_closed_form(cylinder_run):
    assert cylinder_run.status == "singularity-reached"
    worst = 0.0
    for snap in cylinder_run.snapshots:
        tau = 1.0 - snap.t
        if tau < 1e-3:
            continue
        r = math.sqrt(2.0 * tau)
        worst = max(worst, float(np.max(np.abs(snap.psi - r)) / r))
    assert worst <= 1e-4
    assert abs(cylinder_run.T_hat - 1.0) <= 1e-4


def test_singular_time_fit_values(sphere_run):
    fit = sphere_run.time_fit
    assert fit.status == "ok"
    assert fit.amplitude == pytest.approx(math.sqrt(12.0) / 4.0, rel=1e-2)
    assert 0.9 <= fit.exponent <= 1.1
    assert fit.consistency_gap < 1e-3


def test_static_flow_rate_undetermined(exact_flat):
    fit = estimate_singular_time(exact_flat)
    assert fit.status == "rate-undetermined"


def test_type_one_constants(sphere_run, cylinder_run, neckpinch_run):
    target = math.sqrt(12.0) / 4.0
    to = sphere_run.type_one
    assert to.C_fit == pytest.approx(target, rel=1e-2)
    assert to.c_fit == pytest.approx(target, rel=1e-2)
    assert to.min_product >= 0.125 - 1e-3

    toc = cylinder_run.type_one
    assert toc.c_fit == pytest.approx(1.0, rel=1e-2)
    assert toc.min_product >= 0.125 - 1e-3

    ton = neckpinch_run.type_one
    assert ton.min_product >= 0.125 - 1e-3
    assert ton.C_fit / ton.c_fit < 20.0


def test_blowup_rate_exponent_everywhere(sphere_run, cylinder_run, neckpinch_run):
    for hist in (sphere_run, cylinder_run, neckpinch_run):
        assert 0.9 <= hist.time_fit.exponent <= 1.1


def test_lower_bound_every_recorded_time(sphere_run, neckpinch_run):
    for hist in (sphere_run, neckpinch_run):
        ts, ks = hist.sup_riem_series()
        keep = ts < hist.T_hat
        products = (hist.T_hat - ts[keep]) * ks[keep]
        assert np.min(products) >= 0.125 - 1e-3


def test_neckpinch_pinches_at_the_equator(neckpinch_run):
    assert neckpinch_run.status == "singularity-reached"
    snap = neckpinch_run.snapshots[-1]
    cf = neckpinch_run.curvature(len(neckpinch_run.snapshots) - 1)
    peak_xi = snap.xi[int(np.argmax(cf.riem_norm))]
    lo, hi = neckpinch_run.material_domain()
    assert abs(peak_xi - 0.5 * (lo + hi)) < 0.02 * (hi - lo)
    # the neck radius follows the cylinder scaling at the end
    tau = neckpinch_run.T_hat - snap.t
    psi_min = float(np.min(snap.psi[1:-1]))
    assert psi_min == pytest.approx(math.sqrt(2.0 * tau), rel=0.1)


def test_volume_identity(sphere_run, neckpinch_run):
    # d/dt Vol(A) = -int_A R dvol for material regions, trapezoid in time
    for hist in (sphere_run, neckpinch_run):
        lo, hi = hist.material_domain()
        idx = range(3, min(40, len(hist.snapshots) - 1))
        res = volume_identity_residuals(hist, lo + 0.2 * (hi - lo), lo + 0.7 * (hi - lo), idx)
        assert np.median(res) < 0.05


def test_stepper_convergence_order():
    # halving dt and h together cuts the error by at least 3x
    errors = []
    for m, dt in ((101, 0.04), (201, 0.02), (401, 0.01)):
        flow = make_exact_flow(ExactFamily.SPHERE, 3, 1.0, grid_points=m)
        g = flow.metric_at(0.0)
        s, u = g.grid.copy(), g.psi.astype(float) ** 2
        t = 0.0
        while t < 0.2 - 1e-12:
            s, u = _advance(3, Topology.SPHERE, s, u, dt, 1e-13)
            t += dt
        exact = 4.0 * (1.0 - t) * np.sin(g.material() / 2.0) ** 2
        errors.append(float(np.max(np.abs(u - exact))))
    assert errors[0] / errors[1] >= 3.0
    assert errors[1] / errors[2] >= 3.0


def test_flat_run_is_static():
    m = 201
    x = np.linspace(-4, 4, m)
    g = WarpedMetric(3, Topology.FLAT, x, np.ones(m), time=0.0, xi=x)
    hist = evolve(g, FlowConfig(t_final=0.5))
    assert hist.status == "time-limit"
    assert np.max(np.abs(hist.snapshots[-1].psi - 1.0)) < 1e-12


def test_initial_snapshot_matches_input(neckpinch_run):
    g0 = dumbbell_profile(3, grid_points=1201)
    snap = neckpinch_run.snapshots[0]
    # the initial profile may be regridded before stepping, but t=0 data
    # must represent the same metric
    assert snap.t == 0.0
    psi_expect = np.interp(snap.s, g0.grid, g0.psi)
    assert np.max(np.abs(snap.psi - psi_expect)) < 1e-3 * float(np.max(g0.psi))


def test_times_strictly_increasing(sphere_run, cylinder_run, neckpinch_run):
    for hist in (sphere_run, cylinder_run, neckpinch_run):
        ts = hist.times
        assert np.all(np.diff(ts) > 0)
        assert ts[-1] < hist.T_hat


def test_exact_history_fit_is_sharp(exact_sphere, exact_cylinder):
    for hist, T in ((exact_sphere, 1.0), (exact_cylinder, 1.0)):
        fit = estimate_singular_time(hist)
        assert fit.status == "ok"
        assert abs(fit.T_hat - T) < 1e-10
        assert abs(fit.exponent - 1.0) < 1e-6
