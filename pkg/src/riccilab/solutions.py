"""Closed-form shrinking flows and their soliton structure.

Three exact families serve as oracles, initial data and comparison profiles:

    ShrinkingSphere    radius^2(t) = 2(n-1)(T-t), collapses at T
    ShrinkingCylinder  fiber radius^2(t) = 2(n-2)(T-t), static axis
    GaussianFlat       static flat product, no singularity

Each family carries the potential of its self-similar structure,

    sphere     f = n/2
    cylinder   f(x,t) = x^2 / (4(T-t)) + (n-1)/2
    flat       f(x,t) = |x|^2 / (4(T-t))

and ``soliton_residual`` measures, by finite differences on the stored grid,
how far a (metric, potential, T) triple is from satisfying

    Ric + Hess f = g / (2(T-t))
    R + |grad f|^2 = f / (T-t)
    df/dt = |grad f|^2

The middle identity is the usual normalization; at T-t = 1 it reduces to
R + |grad f|^2 - f = 0.

On the flat product the potential depends on the fiber coordinate as well;
the structure stores the transverse quadratic coefficient (1/(4(T-t)) for the
exact family) so the fiber Hessian at the axis is available to the residuals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .geometry import (
    Topology,
    WarpedMetric,
    curvature_field,
    first_derivative,
    second_derivative,
)

__all__ = [
    "ExactFamily",
    "ExactFlow",
    "SolitonStructure",
    "SolitonResiduals",
    "RigidityVerdict",
    "make_exact_flow",
    "soliton_potential",
    "soliton_residual",
    "rigidity_probe",
]


class ExactFamily(str, Enum):
    SPHERE = "ShrinkingSphere"
    CYLINDER = "ShrinkingCylinder"
    GAUSSIAN = "GaussianFlat"


@dataclass(frozen=True)
class ExactFlow:
    """Closed-form flow: a map t -> WarpedMetric valid for all t < T."""

    family: ExactFamily
    n: int
    T: float
    grid_points: int = 801
    axis_extent: float = 8.0      # half-length of the stored axis (cylinder, flat)
    circumference: float | None = None  # periodic cylinder instead of the infinite axis
    flat_psi: float = 1.0

    @property
    def singular(self) -> bool:
        return self.family is not ExactFamily.GAUSSIAN

    @property
    def topology(self) -> Topology:
        if self.family is ExactFamily.SPHERE:
            return Topology.SPHERE
        if self.family is ExactFamily.GAUSSIAN:
            return Topology.FLAT
        return Topology.CYLINDER_PERIODIC if self.circumference else Topology.CYLINDER_INFINITE

    def _tau(self, t: float) -> float:
        tau = self.T - t
        if self.singular and tau <= 0.0:
            raise ValueError(f"time {t} is not before the singular time {self.T}")
        return tau

    def radius(self, t: float) -> float:
        """Fiber radius at time t (sphere radius for the sphere family)."""
        tau = self._tau(t)
        if self.family is ExactFamily.SPHERE:
            return math.sqrt(2.0 * (self.n - 1) * tau)
        if self.family is ExactFamily.CYLINDER:
            return math.sqrt(2.0 * (self.n - 2) * tau)
        return self.flat_psi

    def scalar_value(self, t: float) -> float:
        """Spatially constant scalar curvature of the family at time t."""
        if self.family is ExactFamily.SPHERE:
            return self.n / (2.0 * self._tau(t))
        if self.family is ExactFamily.CYLINDER:
            return (self.n - 1) / (2.0 * self._tau(t))
        return 0.0

    def riem_value(self, t: float) -> float:
        n = self.n
        if self.family is ExactFamily.SPHERE:
            return math.sqrt(2.0 * n * (n - 1)) / (2.0 * (n - 1) * self._tau(t))
        if self.family is ExactFamily.CYLINDER:
            return math.sqrt(2.0 * (n - 1) * (n - 2)) / (2.0 * (n - 2) * self._tau(t))
        return 0.0

    def material_domain(self) -> tuple[float, float]:
        if self.family is ExactFamily.SPHERE:
            return 0.0, math.pi * self.radius(0.0)
        if self.circumference:
            return 0.0, self.circumference
        return -self.axis_extent, self.axis_extent

    def metric_at(self, t: float) -> WarpedMetric:
        m = self.grid_points
        if self.family is ExactFamily.SPHERE:
            r = self.radius(t)
            r0 = self.radius(0.0)
            theta = np.linspace(0.0, math.pi, m)
            psi = r * np.sin(theta)
            psi[0] = 0.0
            psi[-1] = 0.0
            return WarpedMetric(self.n, Topology.SPHERE, theta * r, psi, time=t, xi=theta * r0)
        lo, hi = self.material_domain()
        x = np.linspace(lo, hi, m)
        psi = np.full(m, self.radius(t))
        return WarpedMetric(self.n, self.topology, x, psi, time=t, xi=x)

    def position(self, xi, t: float):
        """Arclength coordinate at time t of the material point(s) xi."""
        if self.family is ExactFamily.SPHERE:
            return np.asarray(xi, dtype=float) * (self.radius(t) / self.radius(0.0))
        return np.asarray(xi, dtype=float)


def make_exact_flow(family: ExactFamily | str, n: int, T: float, **kwargs) -> ExactFlow:
    """Build one of the closed-form flows; n >= 3 throughout."""
    fam = ExactFamily(family)
    if n < 3:
        raise ValueError(f"unsupported dimension n={n}; the fiber needs n >= 3")
    return ExactFlow(family=fam, n=n, T=T, **kwargs)


@dataclass
class SolitonStructure:
    """A metric snapshot with a candidate self-similar potential.

    ``potential_at`` evaluates f at the metric's material points for times
    near ``metric.time`` (used for the time-coupling residual); it is None
    for structures assembled from raw arrays, in which case that residual is
    skipped.  ``fiber_quadratic`` is the transverse quadratic coefficient of
    the potential on flat products (None elsewhere).
    """

    metric: WarpedMetric
    potential: np.ndarray
    singular_time: float
    potential_at: Callable[[float], np.ndarray] | None = None
    fiber_quadratic: float | None = None
    family: ExactFamily | None = None


def soliton_potential(family: ExactFamily | str, n: int, T: float, t: float, **kwargs) -> SolitonStructure:
    """Exact potential of the family at time t, on the family's grid."""
    flow = make_exact_flow(family, n, T, **kwargs)
    metric = flow.metric_at(t)
    x = metric.material()

    if flow.family is ExactFamily.SPHERE:
        def f_at(tt: float) -> np.ndarray:
            return np.full(x.shape, n / 2.0)
        fiber_quad = None
    elif flow.family is ExactFamily.CYLINDER:
        def f_at(tt: float) -> np.ndarray:
            return x**2 / (4.0 * (T - tt)) + (n - 1) / 2.0
        fiber_quad = None
    else:
        def f_at(tt: float) -> np.ndarray:
            return x**2 / (4.0 * (T - tt))
        fiber_quad = 1.0 / (4.0 * (T - t))

    return SolitonStructure(
        metric=metric,
        potential=f_at(t),
        singular_time=T,
        potential_at=f_at,
        fiber_quadratic=fiber_quad,
        family=flow.family,
    )


@dataclass(frozen=True)
class SolitonResiduals:
    """Sup-norm defects of the three self-similar identities."""

    eq_residual: float
    norm_residual: float
    time_coupling_residual: float | None
    eq_radial: np.ndarray
    eq_spherical: np.ndarray
    norm_field: np.ndarray

    def max_residual(self) -> float:
        worst = max(self.eq_residual, self.norm_residual)
        if self.time_coupling_residual is not None:
            worst = max(worst, self.time_coupling_residual)
        return worst


def _interior(metric: WarpedMetric) -> slice:
    # poles are excluded: psi -> 0 makes the fiber terms 0/0 there
    return slice(2, -2) if metric.topology.has_poles else slice(None)


def soliton_residual(structure: SolitonStructure) -> SolitonResiduals:
    """Finite-difference residuals of the canonical self-similar identities."""
    metric = structure.metric
    f = np.asarray(structure.potential, dtype=float)
    tau = structure.singular_time - metric.time
    if tau <= 0.0:
        raise ValueError("metric time must precede the declared singular time")

    s = metric.grid
    cf = curvature_field(metric)
    f_s = first_derivative(s, f)
    f_ss = second_derivative(s, f)

    half = 1.0 / (2.0 * tau)
    r_rad = cf.ricci_radial + f_ss - half
    if metric.topology is Topology.FLAT:
        fq = structure.fiber_quadratic if structure.fiber_quadratic is not None else 0.0
        r_sph = np.full_like(f, 2.0 * fq - half)
    else:
        with np.errstate(divide="ignore", invalid="ignore"):
            # poles excluded from the sup below; psi vanishes there
            r_sph = cf.ricci_spherical + (first_derivative(s, metric.psi) / metric.psi) * f_s - half

    norm_field = cf.scalar + f_s**2 - f / tau

    sl = _interior(metric)
    eq_res = float(np.max(np.maximum(np.abs(r_rad[sl]), np.abs(r_sph[sl]))))
    norm_res = float(np.max(np.abs(norm_field[sl])))

    time_res = None
    if structure.potential_at is not None:
        h = 1e-5 * tau
        df_dt = (structure.potential_at(metric.time + h) - structure.potential_at(metric.time - h)) / (2.0 * h)
        time_res = float(np.max(np.abs(df_dt[sl] - (f_s**2)[sl])))

    return SolitonResiduals(
        eq_residual=eq_res,
        norm_residual=norm_res,
        time_coupling_residual=time_res,
        eq_radial=r_rad,
        eq_spherical=r_sph,
        norm_field=norm_field,
    )


class RigidityVerdict(str, Enum):
    STRICTLY_POSITIVE = "StrictlyPositiveR"
    FLAT_GAUSSIAN = "FlatGaussian"
    VIOLATION = "Violation"


def rigidity_probe(structure: SolitonStructure, tol: float = 1e-4) -> RigidityVerdict:
    """Scalar-curvature rigidity check on a verified shrinker structure.

    The scalar curvature of a shrinker is nonnegative, and vanishing at one
    point forces global flatness.  ``tol`` is relative to the shrinker
    curvature scale 1/(2(T-t)).
    """
    metric = structure.metric
    tau = structure.singular_time - metric.time
    scale = 1.0 / (2.0 * tau)
    cf = curvature_field(metric)
    sl = _interior(metric)
    r_min = float(np.min(cf.scalar[sl]))
    if r_min < -tol * scale:
        return RigidityVerdict.VIOLATION
    if r_min <= tol * scale:
        if float(np.max(cf.riem_norm[sl])) <= tol * scale:
            return RigidityVerdict.FLAT_GAUSSIAN
        return RigidityVerdict.VIOLATION
    return RigidityVerdict.STRICTLY_POSITIVE
