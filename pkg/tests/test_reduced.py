import math

import numpy as np
import pytest

from riccilab.reduced import (
    adjoint_heat_residual,
    density_estimate,
    envelope_fit,
    monotonicity_check,
    reduced_distance,
    reduced_distance_field,
    reduced_volume,
    reduced_volume_series,
)
from riccilab.singular import parabolic_rescale
from riccilab.solutions import ExactFamily, soliton_potential, soliton_residual

THETA_SPHERE = 2.0 * math.sqrt(math.pi) * math.exp(-1.5)
THETA_CYLINDER = 2.0 / math.e


def test_flat_reduced_distance_exact(exact_flat):
    # analytic minimizer: l = d^2 / (4 (t0 - tbar))
    mc = reduced_distance(exact_flat, 0.0, 2.0, 0.0, t0=1.0, n_nodes=48)
    assert mc.converged
    assert mc.reduced_distance == pytest.approx(1.0, abs=1e-9)


def test_flat_reduced_distance_grid(exact_flat):
    # 10 x 10 sample of (q, tbar) within 1e-3 relative
    rng = np.random.default_rng(7)
    qs = rng.uniform(-2.5, 2.5, 10)
    tbars = rng.uniform(0.05, 0.9, 10)
    fld = reduced_distance_field(exact_flat, 0.0, tbars, qs, t0=1.0, n_nodes=48)
    expect = qs[None, :] ** 2 / (4.0 * (1.0 - tbars)[:, None])
    rel = np.abs(fld.values - expect) / np.maximum(np.abs(expect), 1e-3)
    assert np.max(rel) < 1e-3
    assert fld.converged.all()


def test_vanishing_endpoint_limit(exact_flat):
    # q = p on the static flat flow: exactly zero
    mc = reduced_distance(exact_flat, 0.5, 0.5, 0.2, t0=1.0, n_nodes=32)
    assert abs(mc.reduced_distance) < 1e-12


def test_sphere_singular_basepoint(exact_sphere):
    for q in (0.0, np.pi, 2 * np.pi * 0.99):
        mc = reduced_distance(exact_sphere, 0.0, q, 0.5, n_nodes=256)
        assert mc.converged
        assert mc.reduced_distance == pytest.approx(1.5, rel=1e-2)


def test_cylinder_singular_basepoint(exact_cylinder):
    for x, tbar in ((0.0, 0.5), (1.0, 0.5), (2.0, 0.5), (1.5, 0.8)):
        tau = 1.0 - tbar
        expect = x * x / (4.0 * tau) + 1.0
        mc = reduced_distance(exact_cylinder, 0.0, x, tbar, n_nodes=64)
        assert mc.reduced_distance == pytest.approx(expect, rel=2e-2)


def test_upper_bound_decreases_with_refinement(exact_sphere):
    # nested curve families: more nodes can only lower the discrete value
    vals = [
        reduced_distance(exact_sphere, 0.0, 3.0, 0.5, n_nodes=n).reduced_distance
        for n in (32, 64, 128, 256)
    ]
    for a, b in zip(vals[:-1], vals[1:]):
        assert b <= a + 1e-6


def test_reduced_volume_oracles(exact_flat, exact_sphere, exact_cylinder):
    v_flat = reduced_volume(exact_flat, 0.0, 0.4, t0=1.0, n_nodes=48)
    assert v_flat.value == pytest.approx(1.0, abs=1e-3)
    v_s = reduced_volume(exact_sphere, 0.0, 0.5, n_nodes=256)
    assert v_s.value == pytest.approx(THETA_SPHERE, rel=1e-2)
    v_c = reduced_volume(exact_cylinder, 0.0, 0.5, n_nodes=64)
    assert v_c.value == pytest.approx(THETA_CYLINDER, rel=1e-2)


def test_monotone_series_on_exact_families(exact_flat, exact_sphere, exact_cylinder):
    tbars = [0.2, 0.5, 0.75, 0.875]
    for hist, nodes, t0 in ((exact_flat, 48, 1.0), (exact_sphere, 256, None), (exact_cylinder, 64, None)):
        series = reduced_volume_series(hist, 0.0, tbars, t0=t0, n_nodes=nodes)
        rep = monotonicity_check(series)
        assert rep.nondecreasing and rep.below_one
        assert rep.spread <= 1e-3  # constant on self-similar flows
        assert rep.constant


def test_constancy_cross_references_soliton(exact_cylinder):
    series = reduced_volume_series(exact_cylinder, 0.0, [0.3, 0.5, 0.7], n_nodes=64)

    def soliton_quality():
        st = soliton_potential(ExactFamily.CYLINDER, 3, 1.0, 0.5, grid_points=401)
        return soliton_residual(st).max_residual()

    rep = monotonicity_check(series, soliton_check=soliton_quality)
    assert rep.constant
    assert rep.soliton_residual is not None and rep.soliton_residual < 1e-6


def test_adjoint_heat_flat_and_refinement(exact_flat):
    rep = adjoint_heat_residual(exact_flat, 0.0, 0.4, (-2.0, 2.0), t0=1.0, n_nodes=48)
    assert rep.max_abs < 1e-3
    fine = adjoint_heat_residual(
        exact_flat, 0.0, 0.4, (-2.0, 2.0), t0=1.0, n_nodes=48, dt_frac=0.015, ds_frac=0.125
    )
    assert rep.max_abs / fine.max_abs >= 3.0


def test_adjoint_heat_equality_on_shrinkers(exact_sphere, exact_cylinder):
    rep_s = adjoint_heat_residual(exact_sphere, 0.0, 0.5, (1.5, 4.5), n_nodes=192)
    assert rep_s.max_abs < 1e-3
    rep_c = adjoint_heat_residual(exact_cylinder, 0.0, 0.5, (-2.5, 2.5), n_nodes=64)
    assert rep_c.max_abs < 1e-3


def test_adjoint_heat_one_sided_on_neckpinch(neckpinch_run):
    lo, hi = neckpinch_run.material_domain()
    tau = 0.5 * (neckpinch_run.T_hat - neckpinch_run.times[0])
    rep = adjoint_heat_residual(
        neckpinch_run, lo, neckpinch_run.T_hat - tau, (lo + 1e-9, lo + 0.25 * (hi - lo)), n_nodes=64
    )
    assert rep.max_value <= 1e-3


def test_envelope_constants(exact_flat, exact_sphere, exact_cylinder):
    taus = np.array([0.6, 0.45, 0.3, 0.2])
    for hist, t0, nodes in ((exact_flat, 1.0, 48), (exact_sphere, None, 128), (exact_cylinder, None, 64)):
        T0 = 1.0
        ef = envelope_fit(hist, 0.0, T0 - taus, t0=t0, n_nodes=nodes)
        assert math.isfinite(ef.K_fit) and ef.K_fit > 0
        lo, hi = hist.material_domain()
        ef2 = envelope_fit(hist, 0.0, T0 - taus, q_points=np.linspace(lo, hi, 81), t0=t0, n_nodes=nodes)
        assert abs(ef2.K_fit / ef.K_fit - 1.0) < 0.10


def test_density_estimates(exact_sphere, exact_cylinder):
    est_s = density_estimate(exact_sphere, 0.0, n_nodes=256)
    assert est_s.theta == pytest.approx(THETA_SPHERE, rel=1e-2)
    assert est_s.verdict == "Singular"
    assert est_s.lower_bound <= est_s.theta <= 1.0 + 1e-3

    est_c = density_estimate(exact_cylinder, 0.0, n_nodes=64)
    assert est_c.theta == pytest.approx(THETA_CYLINDER, rel=1e-2)
    assert est_c.verdict == "Singular"


def test_density_ordering(exact_flat, exact_sphere, exact_cylinder):
    # theta_flat = 1 > theta_sphere > theta_cylinder
    v_flat = reduced_volume(exact_flat, 0.0, 0.9, t0=1.0, n_nodes=48).value
    v_s = reduced_volume(exact_sphere, 0.0, 0.9, n_nodes=256).value
    v_c = reduced_volume(exact_cylinder, 0.0, 0.9, n_nodes=64).value
    assert v_flat > v_s > v_c


def test_density_needs_singular_time(exact_flat):
    with pytest.raises(ValueError):
        density_estimate(exact_flat, 0.0)


def test_scaling_identity(exact_sphere):
    lam = 4.0
    rescaled = parabolic_rescale(exact_sphere, lam, base=0.0)
    l_orig = reduced_distance(exact_sphere, 0.0, 2.0, 1.0 - 1.0 / lam, n_nodes=128).reduced_distance
    l_resc = reduced_distance(rescaled, 0.0, 2.0, -1.0, n_nodes=128).reduced_distance
    assert l_resc == pytest.approx(l_orig, rel=1e-2)


def test_neckpinch_reduced_distance_cylinder_potential(neckpinch_run):
    lo, hi = neckpinch_run.material_domain()
    neck = 0.5 * (lo + hi)
    T = neckpinch_run.T_hat
    tau = 0.01 * T
    mc = reduced_distance(neckpinch_run, neck, neck, T - tau, n_nodes=96)
    # the neck approaches the cylinder, whose potential at the axis point is
    # (n-1)/2 = 1; convergence is logarithmic, so allow the late-time gap
    assert mc.reduced_distance == pytest.approx(1.0, rel=0.12)
