"""Rotationally symmetric metrics on a 1D arclength grid.

A metric of the form

    g = ds^2 + psi(s)^2 gF

is stored as plain arrays (s_i, psi_i), where gF is either the unit round
(n-1)-sphere (closed sphere and cylinder topologies) or the flat (n-1)-plane
(EuclideanFlat, so that psi = const is genuinely flat R^n).  All analysis in
the package happens in this orbit space; basepoints and sample points are
s-coordinates or, across a flow, material labels xi that ride along with the
evolving metric.

Curvature of the warped form, with kF the fiber sectional curvature (1 round,
0 flat):

    K_rad  = -psi_ss / psi                 planes containing d/ds
    K_sph  = (kF - psi_s^2) / psi^2        planes tangent to the fiber
    Ric    = (n-1) K_rad ds^2  +  (K_rad + (n-2) K_sph) psi^2 gF
    R      = (n-1) (2 K_rad + (n-2) K_sph)
    |Rm|^2 = 4(n-1) K_rad^2 + 2(n-1)(n-2) K_sph^2

The |Rm| convention is chosen so that constant curvature k gives exactly
|Rm| = sqrt(2n(n-1)) |k|; it is quoted in every report this package emits.

Poles of a closed sphere profile are grid endpoints with psi = 0; derivative
stencils there use the odd symmetric extension of psi, which keeps the
second-order (and, on locally uniform grids, fourth-order) accuracy of the
interior stencils.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

__all__ = [
    "Topology",
    "WarpedMetric",
    "CurvatureField",
    "BallInclusionCheck",
    "InvalidMetricError",
    "curvature_field",
    "curvature_from_profile",
    "profile_derivatives",
    "distance",
    "volume",
    "fiber_volume_factor",
    "first_derivative",
    "second_derivative",
    "ball_inclusion_check",
    "write_metric",
    "read_metric",
    "RM_NORM_CONVENTION",
]

RM_NORM_CONVENTION = "|Rm|^2 = 4(n-1)*K_rad^2 + 2(n-1)*(n-2)*K_sph^2"

# Hard floor on grid spacing; configured solvers may use larger values.
MIN_GRID_SPACING = 1e-14

# Tolerance for the smooth pole closure check |psi_s| -> 1.
POLE_SLOPE_TOL = 0.25


class InvalidMetricError(ValueError):
    """Raised for degenerate profile data (non-monotone grid, psi <= 0, ...)."""


class Topology(str, Enum):
    SPHERE = "SphereClosed"
    CYLINDER_PERIODIC = "CylinderPeriodic"
    CYLINDER_INFINITE = "CylinderInfinite"
    FLAT = "EuclideanFlat"

    @property
    def fiber_curvature(self) -> float:
        return 0.0 if self is Topology.FLAT else 1.0

    @property
    def has_poles(self) -> bool:
        return self is Topology.SPHERE

    @property
    def periodic(self) -> bool:
        return self is Topology.CYLINDER_PERIODIC


def fiber_volume_factor(n: int, topology: Topology) -> float:
    """Volume of the unit fiber: |S^{n-1}| for round fibers, 1 for flat ones.

    The flat fiber is normalized to unit coordinate volume so that volumes of
    flat products stay finite per unit cross-section.
    """
    if topology is Topology.FLAT:
        return 1.0
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


@dataclass(frozen=True)
class WarpedMetric:
    """One snapshot of a rotationally symmetric metric.

    grid : strictly increasing arclength coordinates s_0 < ... < s_m
    psi  : fiber radius psi(s_i) > 0 on the interior
    xi   : optional material labels identifying points across a flow

    Periodic profiles store one full period including the duplicate wrap
    node, i.e. s_m - s_0 is the period and psi_m = psi_0.
    """

    n: int
    topology: Topology
    grid: np.ndarray
    psi: np.ndarray
    time: float = 0.0
    xi: np.ndarray | None = None

    def __post_init__(self):
        grid = np.asarray(self.grid, dtype=float)
        psi = np.asarray(self.psi, dtype=float)
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "psi", psi)
        if self.xi is not None:
            object.__setattr__(self, "xi", np.asarray(self.xi, dtype=float))
        if self.n < 3:
            raise InvalidMetricError(f"dimension n={self.n} < 3")
        if grid.ndim != 1 or grid.size < 5 or psi.shape != grid.shape:
            raise InvalidMetricError("need matching 1D arrays with >= 5 nodes")
        spacing = np.diff(grid)
        if np.any(spacing <= MIN_GRID_SPACING):
            raise InvalidMetricError("grid not strictly increasing above spacing floor")
        if not np.all(np.isfinite(psi)):
            raise InvalidMetricError("non-finite psi values")
        interior = psi[1:-1] if self.topology.has_poles else psi
        if np.any(interior <= 0.0):
            raise InvalidMetricError("psi must be positive away from poles")
        if self.topology.has_poles:
            scale = float(np.max(psi))
            h0 = spacing[0]
            h1 = spacing[-1]
            if abs(psi[0]) > 1e-8 * scale or abs(psi[-1]) > 1e-8 * scale:
                raise InvalidMetricError("closed sphere profile must vanish at the poles")
            if abs(psi[1] / h0 - 1.0) > POLE_SLOPE_TOL or abs(psi[-2] / h1 - 1.0) > POLE_SLOPE_TOL:
                raise InvalidMetricError("pole closure is not smooth (|psi_s| far from 1)")
        if self.topology.periodic:
            scale = float(np.max(np.abs(psi)))
            if abs(psi[0] - psi[-1]) > 1e-9 * scale:
                raise InvalidMetricError("periodic profile must repeat at the wrap node")

    @property
    def length(self) -> float:
        return float(self.grid[-1] - self.grid[0])

    def material(self) -> np.ndarray:
        """Material labels; defaults to the current arclength coordinates."""
        return self.grid if self.xi is None else self.xi

    def s_of_xi(self, xi) -> np.ndarray:
        return np.interp(xi, self.material(), self.grid)

    def psi_of_s(self, s) -> np.ndarray:
        return np.interp(s, self.grid, self.psi)

    def scaled(self, lam: float, time: float | None = None) -> "WarpedMetric":
        """Metric multiplied by lam (lengths scale by sqrt(lam))."""
        root = math.sqrt(lam)
        return WarpedMetric(
            n=self.n,
            topology=self.topology,
            grid=self.grid * root,
            psi=self.psi * root,
            time=self.time if time is None else time,
            xi=self.xi,
        )


@dataclass(frozen=True)
class CurvatureField:
    """Pointwise curvature data of a WarpedMetric."""

    scalar: np.ndarray
    riem_norm: np.ndarray
    ricci_radial: np.ndarray
    ricci_spherical: np.ndarray
    k_radial: np.ndarray
    k_spherical: np.ndarray

    @property
    def sup_riem(self) -> float:
        return float(np.max(self.riem_norm))

    @property
    def sup_ricci(self) -> float:
        return float(np.max(np.maximum(np.abs(self.ricci_radial), np.abs(self.ricci_spherical))))


def first_derivative(s: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Second-order first derivative of samples f(s) on a nonuniform grid."""
    s = np.asarray(s, dtype=float)
    f = np.asarray(f, dtype=float)
    out = np.empty_like(f)
    hm = s[1:-1] - s[:-2]
    hp = s[2:] - s[1:-1]
    out[1:-1] = (-hp**2 * f[:-2] + (hp**2 - hm**2) * f[1:-1] + hm**2 * f[2:]) / (hm * hp * (hm + hp))
    h0, h1 = s[1] - s[0], s[2] - s[1]
    out[0] = (-(2 * h0 + h1) * f[0] + (h0 + h1) ** 2 / h1 * f[1] - h0**2 / h1 * f[2]) / (h0 * (h0 + h1))
    hb, ha = s[-1] - s[-2], s[-2] - s[-3]
    out[-1] = ((2 * hb + ha) * f[-1] - (hb + ha) ** 2 / ha * f[-2] + hb**2 / ha * f[-3]) / (hb * (hb + ha))
    return out


def second_derivative(s: np.ndarray, f: np.ndarray) -> np.ndarray:
    """Second-order second derivative on a nonuniform grid (ends copied inward)."""
    s = np.asarray(s, dtype=float)
    f = np.asarray(f, dtype=float)
    out = np.empty_like(f)
    hm = s[1:-1] - s[:-2]
    hp = s[2:] - s[1:-1]
    out[1:-1] = 2.0 * (hp * f[:-2] - (hm + hp) * f[1:-1] + hm * f[2:]) / (hm * hp * (hm + hp))
    out[0] = out[1]
    out[-1] = out[-2]
    return out


def profile_derivatives(s: np.ndarray, f: np.ndarray, topology: Topology) -> tuple[np.ndarray, np.ndarray]:
    """psi_s and psi_ss on the grid, with topology-aware end handling.

    Interior points use the standard 3-point nonuniform stencils.  Near the
    poles of a closed profile (psi = 0 at the ends, odd extension across
    them) the stencils are upgraded to the 5-point fourth-order versions
    wherever the grid is locally uniform; this matters because K_sph involves
    the cancellation (1 - psi_s^2), which is O(h^2) near a pole.  On a fully
    uniform closed grid the fourth-order stencils are used everywhere.
    """
    if topology.periodic:
        # nodes 0..m-1 carry the period, node m duplicates node 0
        sc = s[:-1]
        fc = f[:-1]
        period = s[-1] - s[0]
        hm = np.empty_like(fc)
        hp = np.empty_like(fc)
        hm[1:] = np.diff(sc)
        hm[0] = s[-1] - sc[-1]
        hp[:-1] = np.diff(sc)
        hp[-1] = s[-1] - sc[-1]
        fm = np.roll(fc, 1)
        fp = np.roll(fc, -1)
        denom = hm * hp * (hm + hp)
        d1 = (-hp**2 * fm + (hp**2 - hm**2) * fc + hm**2 * fp) / denom
        d2 = 2.0 * (hp * fm - (hm + hp) * fc + hm * fp) / denom
        psi_s = np.concatenate((d1, [d1[0]]))
        psi_ss = np.concatenate((d2, [d2[0]]))
        return psi_s, psi_ss

    if topology.has_poles:
        psi_s, psi_ss = _closed_base_derivatives(s, f)
        _upgrade_pole_run(s, f, psi_s, psi_ss, left=True)
        _upgrade_pole_run(s, f, psi_s, psi_ss, left=False)
        return psi_s, psi_ss

    hm = np.empty_like(f)
    hp = np.empty_like(f)
    fm = np.empty_like(f)
    fp = np.empty_like(f)
    hm[1:] = np.diff(s)
    hp[:-1] = np.diff(s)
    fm[1:] = f[:-1]
    fp[:-1] = f[1:]
    hm[0] = hp[0]
    fm[0] = f[0]
    hp[-1] = hm[-1]
    fp[-1] = f[-1]

    denom = hm * hp * (hm + hp)
    psi_s = (-hp**2 * fm + (hp**2 - hm**2) * f + hm**2 * fp) / denom
    psi_ss = 2.0 * (hp * fm - (hm + hp) * f + hm * fp) / denom

    # quadratic one-sided formulas at open ends
    h0, h1 = s[1] - s[0], s[2] - s[1]
    psi_s[0] = (-(2 * h0 + h1) * f[0] + (h0 + h1) ** 2 / h1 * f[1] - h0**2 / h1 * f[2]) / (h0 * (h0 + h1))
    psi_ss[0] = 2.0 * (h1 * f[0] - (h0 + h1) * f[1] + h0 * f[2]) / (h0 * h1 * (h0 + h1))
    hb, ha = s[-1] - s[-2], s[-2] - s[-3]
    psi_s[-1] = ((2 * hb + ha) * f[-1] - (hb + ha) ** 2 / ha * f[-2] + hb**2 / ha * f[-3]) / (hb * (hb + ha))
    psi_ss[-1] = 2.0 * (ha * f[-1] - (ha + hb) * f[-2] + hb * f[-3]) / (ha * hb * (ha + hb))
    return psi_s, psi_ss


def _closed_base_derivatives(s: np.ndarray, f: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3-point stencils on a closed profile, odd ghosts across both poles."""
    hm = np.empty_like(f)
    hp = np.empty_like(f)
    fm = np.empty_like(f)
    fp = np.empty_like(f)
    hm[1:] = np.diff(s)
    hp[:-1] = np.diff(s)
    fm[1:] = f[:-1]
    fp[:-1] = f[1:]
    hm[0] = s[1] - s[0]
    fm[0] = -f[1]
    hp[-1] = s[-1] - s[-2]
    fp[-1] = -f[-2]
    denom = hm * hp * (hm + hp)
    psi_s = (-hp**2 * fm + (hp**2 - hm**2) * f + hm**2 * fp) / denom
    psi_ss = 2.0 * (hp * fm - (hm + hp) * f + hm * fp) / denom
    return psi_s, psi_ss


def _uniform_run_length(h: np.ndarray) -> int:
    """Number of leading spacings equal to h[0] within 1e-8 relative."""
    dev = np.abs(h - h[0]) > 1e-8 * h[0]
    idx = np.argmax(dev)
    return int(len(h) if not dev.any() else idx)


def _upgrade_pole_run(s, f, psi_s, psi_ss, left: bool) -> None:
    """Fourth-order stencils over the uniform run adjacent to a pole.

    psi_s must beat the small quantity 1 - psi_s^2 pointwise near a pole, so
    second-order stencils are not enough there.  On the uniform run the
    5-point formulas (with two odd ghosts beyond the pole) apply; if the grid
    is not locally uniform an odd-basis polynomial fit anchored at the pole
    covers the first three interior nodes.
    """
    m = len(f)
    if left:
        sv, fv = s, f
    else:
        sv = s[-1] - s[::-1]
        fv = f[::-1]
    h = np.diff(sv)
    run = _uniform_run_length(h)
    if run >= 4:
        hL = h[0]
        ext = np.concatenate((-fv[2:0:-1], fv[: run + 1]))
        idx = np.arange(0, run - 1)
        j = idx + 2
        d1 = (ext[j - 2] - 8 * ext[j - 1] + 8 * ext[j + 1] - ext[j + 2]) / (12.0 * hL)
        d2 = (-ext[j - 2] + 16 * ext[j - 1] - 30 * ext[j] + 16 * ext[j + 1] - ext[j + 2]) / (12.0 * hL**2)
    else:
        idx = np.arange(0, min(13, m - 1))
        window = slice(0, min(17, m))
        d1 = _odd_fit_derivative(sv[window], fv[window], sv[idx])
        d2 = None
    if left:
        psi_s[idx] = d1
        if d2 is not None:
            psi_ss[idx] = d2
    else:
        psi_s[m - 1 - idx] = -d1
        if d2 is not None:
            psi_ss[m - 1 - idx] = d2


def _odd_fit_derivative(sw: np.ndarray, fw: np.ndarray, x):
    """Derivative at x of the odd-basis fit a1 u + a3 u^3 + a5 u^5 from a pole.

    The abscissa is normalized before fitting so the basis stays well
    conditioned at any metric scale.
    """
    scale = sw[-1] - sw[0]
    z = (sw - sw[0]) / scale
    basis = np.stack([z, z**3, z**5], axis=1)
    coef, *_ = np.linalg.lstsq(basis, fw, rcond=None)
    zx = (np.asarray(x) - sw[0]) / scale
    return (coef[0] + 3.0 * coef[1] * zx**2 + 5.0 * coef[2] * zx**4) / scale


def u_derivatives(s: np.ndarray, u: np.ndarray, topology: Topology) -> tuple[np.ndarray, np.ndarray]:
    """Derivatives of u = psi^2, which extends evenly across poles.

    Uniform closed grids (and uniform runs adjacent to a pole) get the
    4th-order stencils; everything else the 3-point nonuniform ones.
    """
    if not topology.has_poles:
        return profile_derivatives(s, u, topology)
    h = np.diff(s)
    h0 = h[0]
    if np.allclose(h, h0, rtol=1e-8, atol=0.0):
        ext = np.concatenate((u[2:0:-1], u, u[-2:-4:-1]))
        j = np.arange(2, 2 + len(u))
        u_s = (ext[j - 2] - 8 * ext[j - 1] + 8 * ext[j + 1] - ext[j + 2]) / (12.0 * h0)
        u_ss = (-ext[j - 2] + 16 * ext[j - 1] - 30 * ext[j] + 16 * ext[j + 1] - ext[j + 2]) / (12.0 * h0**2)
        return u_s, u_ss

    hm = np.empty_like(u)
    hp = np.empty_like(u)
    fm = np.empty_like(u)
    fp = np.empty_like(u)
    hm[1:] = h
    hp[:-1] = h
    fm[1:] = u[:-1]
    fp[:-1] = u[1:]
    hm[0] = s[1] - s[0]
    fm[0] = u[1]
    hp[-1] = s[-1] - s[-2]
    fp[-1] = u[-2]
    denom = hm * hp * (hm + hp)
    u_s = (-hp**2 * fm + (hp**2 - hm**2) * u + hm**2 * fp) / denom
    u_ss = 2.0 * (hp * fm - (hm + hp) * u + hm * fp) / denom

    # fourth order over uniform runs next to the poles (even ghosts)
    for left in (True, False):
        sv = s if left else s[-1] - s[::-1]
        fv = u if left else u[::-1]
        hv = np.diff(sv)
        run = _uniform_run_length(hv)
        if run >= 4:
            hL = hv[0]
            ext = np.concatenate((fv[2:0:-1], fv[: run + 1]))
            idx = np.arange(0, run - 1)
            j = idx + 2
            d1 = (ext[j - 2] - 8 * ext[j - 1] + 8 * ext[j + 1] - ext[j + 2]) / (12.0 * hL)
            d2 = (-ext[j - 2] + 16 * ext[j - 1] - 30 * ext[j] + 16 * ext[j + 1] - ext[j + 2]) / (12.0 * hL**2)
            if left:
                u_s[idx] = d1
                u_ss[idx] = d2
            else:
                u_s[len(u) - 1 - idx] = -d1
                u_ss[len(u) - 1 - idx] = d2
    return u_s, u_ss


def _pole_zone_fit(s: np.ndarray, u: np.ndarray, field: np.ndarray, left: bool,
                   cap: int = 16, window: int = 16) -> tuple[int, np.ndarray]:
    """Replace a curvature-like field near a pole by an even extrapolation.

    Curvatures are smooth even functions of the distance to a pole, while
    their finite-difference formulas degrade there; the fit a + b sig^2 over
    the adjacent window extrapolates them stably.  The zone width is a fixed
    node count so that nothing in the stepper chatters as the profile moves.
    Returns the zone width and the fitted values for nodes 0..k*-1.
    """
    m = len(u)
    k_star = min(cap, m // 6)
    w = min(window, m // 6)
    idx = np.arange(k_star, k_star + w)
    sig = (s[idx] - s[0]) if left else (s[-1] - s[::-1][idx])
    vals = field[idx] if left else field[::-1][idx]
    scale = sig[-1]
    z = sig / scale
    basis = np.stack([np.ones_like(z), z**2], axis=1)
    coef, *_ = np.linalg.lstsq(basis, vals, rcond=None)
    span = slice(0, k_star + w)
    sig_new = (s[span] - s[0]) if left else (s[-1] - s[::-1][span])
    fitted = coef[0] + coef[1] * (sig_new / scale) ** 2
    ramp = np.ones(k_star + w)
    ramp[k_star:] = 0.5 * (1.0 + np.cos(np.pi * (np.arange(w) + 0.5) / w))
    raw = field[span] if left else field[::-1][span]
    return k_star + w, ramp * fitted + (1.0 - ramp) * raw


def curvature_from_profile(n: int, topology: Topology, s: np.ndarray, psi: np.ndarray) -> CurvatureField:
    """Curvature of raw profile arrays (no metric validation).

    Pole values of a closed profile come from the smooth-closure limit
    K_rad = K_sph = -psi_sss / psi_s.
    """
    kF = topology.fiber_curvature
    k_rad = np.empty_like(psi)
    k_sph = np.empty_like(psi)
    if topology.has_poles:
        # work with u = psi^2: its stencils carry no pole-parity cancellation,
        # and the remaining near-pole degradation is cured by extrapolation
        u = psi**2
        u_s, u_ss = u_derivatives(s, u, topology)
        sl = slice(1, -1)
        k_rad[sl] = -(u_ss[sl] - u_s[sl] ** 2 / (2.0 * u[sl])) / (2.0 * u[sl])
        k_sph[sl] = (kF - u_s[sl] ** 2 / (4.0 * u[sl])) / u[sl]
        k_rad[0] = k_rad[1]
        k_rad[-1] = k_rad[-2]
        k_sph[0] = k_sph[1]
        k_sph[-1] = k_sph[-2]
        for field in (k_rad, k_sph):
            kL, fitL = _pole_zone_fit(s, u, field, left=True)
            field[:kL] = fitL
            kR, fitR = _pole_zone_fit(s, u, field, left=False)
            field[len(u) - kR :] = fitR[::-1]
    else:
        psi_s, psi_ss = profile_derivatives(s, psi, topology)
        k_rad[:] = -psi_ss / psi
        k_sph[:] = (kF - psi_s**2) / psi**2

    scalar = (n - 1) * (2.0 * k_rad + (n - 2) * k_sph)
    riem = np.sqrt(4.0 * (n - 1) * k_rad**2 + 2.0 * (n - 1) * (n - 2) * k_sph**2)
    ric_rad = (n - 1) * k_rad
    ric_sph = k_rad + (n - 2) * k_sph
    return CurvatureField(
        scalar=scalar,
        riem_norm=riem,
        ricci_radial=ric_rad,
        ricci_spherical=ric_sph,
        k_radial=k_rad,
        k_spherical=k_sph,
    )


def curvature_field(metric: WarpedMetric) -> CurvatureField:
    """Scalar curvature, |Rm|, and Ricci eigenvalues of a metric snapshot."""
    return curvature_from_profile(metric.n, metric.topology, metric.grid, metric.psi)


def distance(metric: WarpedMetric, p: float, q: float) -> float:
    """Geodesic distance between two orbit-space points (s-coordinates).

    For axisymmetric pairs (same fiber position) the geodesic runs along the
    profile curve, so the distance is the arclength gap.  On a periodic axis
    the shorter way around is taken.
    """
    a = float(np.clip(p, metric.grid[0], metric.grid[-1]))
    b = float(np.clip(q, metric.grid[0], metric.grid[-1]))
    d = abs(b - a)
    if metric.topology.periodic:
        period = metric.length
        d = min(d, period - d)
    return d


def volume(metric: WarpedMetric, s_lo: float, s_hi: float) -> float:
    """Volume of the band {s_lo <= s <= s_hi}: integral of |F| psi^{n-1} ds."""
    if s_hi <= s_lo:
        return 0.0
    lo = max(float(s_lo), float(metric.grid[0]))
    hi = min(float(s_hi), float(metric.grid[-1]))
    if hi <= lo:
        return 0.0
    inside = (metric.grid > lo) & (metric.grid < hi)
    s = np.concatenate(([lo], metric.grid[inside], [hi]))
    # interpolate the density itself so mid-cell splits stay exactly additive
    w = fiber_volume_factor(metric.n, metric.topology)
    density = w * metric.psi ** (metric.n - 1)
    vals = np.interp(s, metric.grid, density)
    return float(np.trapezoid(vals, s))


@dataclass
class BallInclusionCheck:
    """Result of the distance-distortion ball check.

    For each sampled time t the check asks whether every grid point within
    g(0)-distance exp(-M t) r of p still lies within g(t)-distance r of p,
    which must hold whenever |Ric| <= M on the ball up to time t.  The proof's
    discrete length estimate Length_t <= exp(M t) Length_0 is sampled on
    random subcurves as well.
    """

    p: float
    r: float
    ricci_bound: float
    times: list[float]
    verdicts: list[bool | None]
    precondition_ok: list[bool]
    curve_samples: int = 0
    curve_violations: int = 0
    max_ricci_seen: float = 0.0

    @property
    def all_true(self) -> bool:
        checked = [v for v in self.verdicts if v is not None]
        return len(checked) > 0 and all(checked)


def ball_inclusion_check(
    history,
    p: float,
    r: float,
    ricci_bound: float,
    times: Sequence[float] | None = None,
    curve_samples: int = 120,
    seed: int = 0,
    tol: float = 1e-9,
) -> BallInclusionCheck:
    """Verify the ball inclusion B_0(p, e^{-Mt} r) within B_t(p, r).

    ``history`` is any flow history exposing ``times``, ``metric_at`` and
    material labels; ``p`` is a material coordinate.  Times where the Ricci
    hypothesis |Ric| <= M fails on the ball are reported as precondition
    violations, not as inclusion failures.
    """
    ts = list(times) if times is not None else [t for t in history.times]
    t0 = ts[0]
    g0 = history.metric_at(t0)
    xi = g0.material()
    s0 = g0.grid
    s0_p = float(np.interp(p, xi, s0))

    rng = np.random.default_rng(seed)
    verdicts: list[bool | None] = []
    precond: list[bool] = []
    max_ric = 0.0
    samples = 0
    violations = 0
    eligible: list[tuple[float, np.ndarray, np.ndarray]] = []

    for t in ts:
        gt = history.metric_at(t)
        st = np.interp(xi, gt.material(), gt.grid)
        st_p = float(np.interp(p, xi, st))
        dt_all = np.abs(st - st_p)
        ball_t = dt_all <= r
        # Ricci hypothesis on the current ball
        cf = curvature_field(gt)
        ric = np.maximum(np.abs(cf.ricci_radial), np.abs(cf.ricci_spherical))
        ric_on_ball = float(np.max(ric[ball_t])) if np.any(ball_t) else 0.0
        max_ric = max(max_ric, ric_on_ball)
        ok = ric_on_ball <= ricci_bound * (1.0 + 1e-9)
        precond.append(ok)
        if not ok:
            verdicts.append(None)
            continue

        elapsed = t - t0
        shrunk = math.exp(-ricci_bound * elapsed) * r
        ball_0 = np.abs(s0 - s0_p) <= shrunk
        inside = dt_all[ball_0] <= r * (1.0 + tol) + tol
        verdicts.append(bool(np.all(inside)))
        idx = np.nonzero(ball_0)[0]
        if idx.size >= 2:
            eligible.append((elapsed, st, idx))

    # length distortion on random material subcurves, spread over the
    # eligible times until the sample budget is reached
    while eligible and samples < curve_samples:
        for elapsed, st, idx in eligible:
            if samples >= curve_samples:
                break
            i, j = sorted(rng.choice(idx, size=2, replace=False))
            if i == j:
                continue
            len0 = abs(s0[j] - s0[i])
            lent = abs(st[j] - st[i])
            samples += 1
            if lent > math.exp(ricci_bound * elapsed) * len0 * (1.0 + 1e-9) + tol:
                violations += 1

    return BallInclusionCheck(
        p=p,
        r=r,
        ricci_bound=ricci_bound,
        times=[float(t) for t in ts],
        verdicts=verdicts,
        precondition_ok=precond,
        curve_samples=samples,
        curve_violations=violations,
        max_ricci_seen=max_ric,
    )


def write_metric(target, metric: WarpedMetric) -> None:
    """Serialize a metric to the columnar text format.

    Header lines give n, topology and time; data rows are ``s psi`` pairs.
    Lines starting with '#' are comments.
    """
    own = isinstance(target, (str, bytes, os.PathLike))
    fh = open(target, "w", encoding="utf-8") if own else target
    try:
        fh.write("# warped product metric snapshot\n")
        fh.write(f"n = {metric.n}\n")
        fh.write(f"topology = {metric.topology.value}\n")
        fh.write(f"time = {float(metric.time):.17g}\n")
        fh.write("# s    psi\n")
        for s, psi in zip(metric.grid, metric.psi):
            fh.write(f"{float(s):.17g} {float(psi):.17g}\n")
    finally:
        if own:
            fh.close()


def read_metric(source) -> WarpedMetric:
    """Parse a metric from the columnar text format written by write_metric."""
    own = isinstance(source, (str, bytes, os.PathLike))
    fh = open(source, "r", encoding="utf-8") if own else source
    try:
        header: dict[str, str] = {}
        rows: list[tuple[float, float]] = []
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" in line:
                key, _, value = line.partition("=")
                header[key.strip()] = value.strip()
                continue
            parts = line.split()
            rows.append((float(parts[0]), float(parts[1])))
    finally:
        if own:
            fh.close()
    if not rows:
        raise InvalidMetricError("no data rows in metric file")
    for key in ("n", "topology", "time"):
        if key not in header:
            raise InvalidMetricError(f"metric file missing header field {key!r}")
    s = np.array([r[0] for r in rows])
    psi = np.array([r[1] for r in rows])
    return WarpedMetric(
        n=int(header["n"]),
        topology=Topology(header["topology"]),
        grid=s,
        psi=psi,
        time=float(header["time"]),
    )
