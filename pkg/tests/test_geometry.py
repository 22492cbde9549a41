import io
import math

import numpy as np
import pytest

from riccilab.geometry import (
    InvalidMetricError,
    Topology,
    WarpedMetric,
    ball_inclusion_check,
    curvature_field,
    distance,
    read_metric,
    volume,
    write_metric,
)


def round_sphere(m=401, radius=1.0):
    s = np.linspace(0.0, np.pi * radius, m)
    psi = radius * np.sin(s / radius)
    psi[0] = psi[-1] = 0.0
    return WarpedMetric(3, Topology.SPHERE, s, psi)


def test_unit_sphere_curvature():
    # R = n(n-1)/r^2 and |Rm| = sqrt(2n(n-1)) |sec| on constant curvature
    cf = curvature_field(round_sphere())
    assert np.max(np.abs(cf.scalar - 6.0)) < 5e-4
    assert np.max(np.abs(cf.riem_norm - math.sqrt(12.0))) < 5e-4
    assert np.max(np.abs(cf.ricci_radial - 2.0)) < 5e-4
    assert np.max(np.abs(cf.ricci_spherical - 2.0)) < 5e-4


def test_cylinder_curvature():
    x = np.linspace(0.0, 2 * np.pi, 129)
    g = WarpedMetric(3, Topology.CYLINDER_PERIODIC, x, np.ones_like(x))
    cf = curvature_field(g)
    assert np.allclose(cf.scalar, 2.0, atol=1e-10)
    assert np.allclose(cf.k_spherical, 1.0, atol=1e-10)
    assert np.allclose(cf.k_radial, 0.0, atol=1e-10)


def test_flat_product_is_flat():
    x = np.linspace(-3.0, 3.0, 101)
    g = WarpedMetric(3, Topology.FLAT, x, np.ones_like(x))
    cf = curvature_field(g)
    assert np.max(np.abs(cf.scalar)) == 0.0
    assert np.max(np.abs(cf.riem_norm)) == 0.0


def test_curvature_refinement_factor():
    # halving h cuts the curvature error by a factor in [3.5, 4.5]
    errs = []
    for m in (101, 201, 401):
        cf = curvature_field(round_sphere(m))
        errs.append(float(np.max(np.abs(cf.scalar - 6.0))))
    for a, b in zip(errs[:-1], errs[1:]):
        assert 3.5 <= a / b <= 4.5


def test_distance_examples():
    flat = WarpedMetric(3, Topology.FLAT, np.linspace(-4, 4, 101), np.ones(101))
    assert distance(flat, 0.0, 2.0) == pytest.approx(2.0)
    sphere = round_sphere()
    assert distance(sphere, 0.0, np.pi) == pytest.approx(np.pi)
    x = np.linspace(0.0, 8.0, 161)
    cyl = WarpedMetric(3, Topology.CYLINDER_INFINITE, x, np.ones_like(x))
    assert distance(cyl, 1.0, 4.0) == pytest.approx(3.0)


def test_volume_examples():
    sphere = round_sphere(801)
    assert volume(sphere, 0.0, np.pi) == pytest.approx(2 * np.pi**2, abs=1e-6)
    assert volume(sphere, 1.0, 1.0) == 0.0
    # additive over disjoint regions
    v1 = volume(sphere, 0.0, 1.2)
    v2 = volume(sphere, 1.2, np.pi)
    assert v1 + v2 == pytest.approx(volume(sphere, 0.0, np.pi), rel=1e-12)


def test_volume_scaling():
    # multiplying the metric by lam scales volumes by lam^{n/2}
    g = round_sphere(401)
    lam = 4.0 * (1.0 - 0.75)  # shrunken sphere: psi scaled by sqrt(4(T-t))
    scaled = g.scaled(lam)
    ratio = volume(scaled, scaled.grid[0], scaled.grid[-1]) / volume(g, 0.0, np.pi)
    assert ratio == pytest.approx(lam ** 1.5, rel=1e-12)


def test_invalid_metrics_rejected():
    s = np.linspace(0, np.pi, 51)
    psi = np.sin(s)
    psi[0] = psi[-1] = 0.0
    bad = psi.copy()
    bad[10] = -0.1
    with pytest.raises(InvalidMetricError):
        WarpedMetric(3, Topology.SPHERE, s, bad)
    with pytest.raises(InvalidMetricError):
        WarpedMetric(3, Topology.SPHERE, s[::-1], psi)
    with pytest.raises(InvalidMetricError):
        WarpedMetric(2, Topology.SPHERE, s, psi)


def test_serialization_roundtrip(tmp_path):
    g = round_sphere(201)
    path = tmp_path / "metric.txt"
    write_metric(path, g)
    back = read_metric(path)
    assert back.n == g.n and back.topology == g.topology
    assert np.allclose(back.grid, g.grid) and np.allclose(back.psi, g.psi)
    buf = io.StringIO()
    write_metric(buf, g)
    buf.seek(0)
    again = read_metric(buf)
    assert np.allclose(again.psi, g.psi)


def test_ball_inclusion_static_flat(exact_flat):
    check = ball_inclusion_check(exact_flat, 0.0, r=1.5, ricci_bound=0.0, curve_samples=120)
    assert check.all_true
    assert check.curve_violations == 0
    assert check.curve_samples >= 100


def test_ball_inclusion_shrinking_sphere(exact_sphere):
    times = [t for t in exact_sphere.times if t < 0.9][:20]
    from riccilab.geometry import curvature_field as cfield

    M = max(cfield(exact_sphere.metric_at(t)).sup_ricci for t in times) * 1.001
    check = ball_inclusion_check(exact_sphere, 0.0, r=0.5, ricci_bound=M, times=times, curve_samples=120)
    assert check.all_true
    assert check.curve_violations == 0
    # t = 0 always holds trivially (first verdict)
    assert check.verdicts[0] is True


def test_ball_inclusion_reports_precondition_violation(exact_sphere):
    # bound far below the actual Ricci curvature: hypothesis fails, no verdict
    times = [t for t in exact_sphere.times if t < 0.5][:5]
    check = ball_inclusion_check(exact_sphere, 0.0, r=0.5, ricci_bound=1e-6, times=times)
    assert not any(check.precondition_ok)
    assert all(v is None for v in check.verdicts)
