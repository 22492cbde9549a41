import math

import numpy as np
import pytest

from riccilab.singular import (
    SET_NAMES,
    blowup_profile,
    classify_singular_points,
    coincidence_check,
    parabolic_rescale,
    rate_band_decomposition,
    rate_norm_factor,
    volume_decay,
)


def test_sphere_every_point_singular(exact_sphere):
    rep = classify_singular_points(exact_sphere)
    for name in SET_NAMES:
        assert rep.flags[name].all(), name
    assert rep.nesting_holds()
    assert rep.rho_stable
    cc = coincidence_check(rep)
    assert cc.agree and cc.interior_disagreements == 0


def test_flat_no_singular_points(exact_flat):
    rep = classify_singular_points(exact_flat)
    for name in SET_NAMES:
        assert not rep.flags[name].any(), name
    assert coincidence_check(rep).agree


def test_neckpinch_neck_only(neckpinch_run):
    rep = classify_singular_points(neckpinch_run)
    assert rep.reliable
    assert rep.nesting_holds()
    assert rep.rho_stable
    cc = coincidence_check(rep)
    assert cc.agree
    assert cc.max_layer_width <= 2
    lo, hi = neckpinch_run.material_domain()
    for name in SET_NAMES:
        members = rep.members(name)
        assert len(members) >= 1
        assert np.all(np.abs(members - 0.5 * (lo + hi)) < 0.02 * (hi - lo)), name
    # polar caps are regular with recorded uniform curvature bounds
    cap_idx = np.argmin(np.abs(rep.points_xi - lo))
    assert not rep.flags["unbounded"][cap_idx]


def test_norm_factor_value():
    assert rate_norm_factor(3) == pytest.approx(math.sqrt(3.0))


def test_rate_bands_sphere(exact_sphere):
    rep = classify_singular_points(exact_sphere)
    rb = rate_band_decomposition(exact_sphere, rep)
    # R (T-t) = 1.5, so membership holds for every level k >= 1
    assert rb.memberships[1].all()
    assert rb.integral_bound_ok
    assert rb.volume_bound_ok


def test_rate_bands_neckpinch(neckpinch_run):
    rep = classify_singular_points(neckpinch_run)
    rb = rate_band_decomposition(neckpinch_run, rep)
    assert rb.integral_bound_ok
    assert rb.volume_bound_ok
    assert any(np.any(m) for m in rb.memberships.values())
    # per-level volumes decay to zero toward the singular time
    for k, series in rb.volumes.items():
        if series[0] > 0:
            assert series[-1] < 0.05 * series[0]


def test_volume_decay(exact_sphere, neckpinch_run, exact_flat):
    rep_s = classify_singular_points(exact_sphere)
    _, series, expn, ratio = volume_decay(exact_sphere, rep_s)
    assert expn == pytest.approx(1.5, abs=0.05)
    rep_n = classify_singular_points(neckpinch_run)
    _, series_n, _, ratio_n = volume_decay(neckpinch_run, rep_n)
    assert ratio_n < 1e-2
    rep_f = classify_singular_points(exact_flat)
    _, series_f, _, _ = volume_decay(exact_flat, rep_f)
    assert np.all(series_f == 0.0)


def test_parabolic_rescale_identity_and_transform(exact_sphere):
    lam = 1.0
    rh = parabolic_rescale(exact_sphere, lam, base=0.0)
    g = rh.metric_at(-0.5)
    g0 = exact_sphere.metric_at(0.5)
    assert np.allclose(g.psi, g0.psi)
    # curvature transforms as |Rm|/lam and obeys the C/(-t) bound
    lam = 16.0
    rh = parabolic_rescale(exact_sphere, lam, base=0.0)
    ts, ks = rh.sup_riem_series()
    keep = ts < 0
    assert np.all(ks[keep] * (-ts[keep]) <= exact_sphere.type_one.C_fit * (1 + 1e-9))
    r1 = rh.riem_at(np.array([1.0]), -1.0)[0]
    r0 = exact_sphere.riem_at(np.array([1.0]), 1.0 - 1.0 / lam)[0]
    assert r1 == pytest.approx(r0 / lam, rel=1e-12)
    # sphere rescaled by 1/(T-t): unit backward time slice is the radius
    # sqrt(2(n-1)) sphere
    g1 = rh.metric_at(-1.0)
    assert float(np.max(g1.psi)) == pytest.approx(math.sqrt(4.0), rel=1e-9)


def test_rescaling_covariance_of_classification(neckpinch_run):
    rep = classify_singular_points(neckpinch_run)
    rh = parabolic_rescale(neckpinch_run, 1e5, base=0.0)
    rep_r = classify_singular_points(rh, points=rep.points_xi)
    for name in SET_NAMES:
        assert np.array_equal(rep.flags[name], rep_r.flags[name]), name


def test_blowup_profiles(exact_sphere, neckpinch_run):
    bp = blowup_profile(exact_sphere, 2.0)
    assert bp.family == "Sphere" and bp.nontrivial

    lo, hi = neckpinch_run.material_domain()
    neck = blowup_profile(neckpinch_run, 0.5 * (lo + hi))
    assert neck.family == "Cylinder" and neck.nontrivial
    assert neck.base_scalar_rescaled == pytest.approx(1.0, rel=5e-2)
    assert neck.distances["Cylinder"] < neck.distances["Sphere"]

    cap = blowup_profile(neckpinch_run, lo)
    assert cap.family == "Flat" and not cap.nontrivial
    assert cap.base_riem_rescaled <= 1e-2


def test_blowup_dichotomy(neckpinch_run):
    # nonflat limit exactly at the singular points, flat elsewhere
    rep = classify_singular_points(neckpinch_run)
    lo, hi = neckpinch_run.material_domain()
    for frac in (0.0, 0.18, 0.5, 0.77, 1.0):
        p = lo + frac * (hi - lo)
        bp = blowup_profile(neckpinch_run, p)
        idx = int(np.argmin(np.abs(rep.points_xi - p)))
        assert bp.nontrivial == bool(rep.flags["moving_witness"][idx]), frac
