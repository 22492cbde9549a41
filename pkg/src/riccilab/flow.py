"""Numerical Ricci flow for rotationally symmetric profiles.

In the arclength gauge the fiber radius obeys

    d psi / dt = psi_ss - (n-2) (kF - psi_s^2) / psi

while the radial metric stretches at the rate (n-1) psi_ss / psi, so the
arclength coordinate of each material point drifts.  The solver advances psi
with a trapezoidal step (Newton on the tridiagonal linearization) and updates
the cell widths with the trapezoid of the stretch rate, which re-establishes
the arclength gauge after every step.  Step doubling provides the local error
estimate and a third-order accepted value; the step size is capped by
sigma / sup|Rm| so the curvature blow-up stays resolved.

Grids follow the curvature: the target spacing is alpha / sqrt(|Rm|) with
graded transitions, and a profile is resampled (monotone cubic) whenever its
cells drift away from the target.  Regridding keeps a uniform band near each
pole, where the fourth-order stencils need it.

Snapshots are recorded every time sup|Rm| crosses the next geometric
threshold (16 per decade by default), which for a Type I flow is a geometric
schedule in T - t, plus on a coarse time grid before curvature starts to
grow.  Each snapshot carries the material labels xi of its nodes so that
points can be followed across the whole history.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.interpolate import PchipInterpolator
from scipy.linalg import solve_banded
from scipy.optimize import minimize_scalar

from .geometry import (
    CurvatureField,
    Topology,
    WarpedMetric,
    curvature_from_profile,
    profile_derivatives,
    u_derivatives,
)
from .solutions import ExactFamily, ExactFlow

__all__ = [
    "FlowConfig",
    "FlowHistory",
    "Snapshot",
    "TypeIConstants",
    "SingularTimeFit",
    "SolverInstabilityError",
    "evolve",
    "exact_history",
    "estimate_singular_time",
    "type_one_constants",
    "dumbbell_profile",
    "volume_identity_residuals",
]

STATUS_SINGULAR = "singularity-reached"
STATUS_TIME_LIMIT = "time-limit"
STATUS_STATIC = "static"


class SolverInstabilityError(RuntimeError):
    """NaN or nonpositive interior psi during a step; carries diagnostics."""

    def __init__(self, message: str, time: float, step: int):
        super().__init__(f"{message} (t={time:.6g}, step={step})")
        self.time = time
        self.step = step


@dataclass
class FlowConfig:
    """Solver knobs; defaults suit the shipped desk-scale scenarios."""

    sigma: float = 0.1                 # dt * sup|Rm| cap
    step_rtol: float = 3e-8            # step-doubling local error tolerance
    stop_sup_riem: float = 1e6         # singularity stop criterion
    t_final: float | None = None       # optional wall in flow time
    grid_floor: float = 1e-7           # smallest allowed spacing
    resolution_alpha: float = 0.25     # target h * sqrt(|Rm|)
    min_points: int = 401
    max_points: int = 60000
    per_decade_snapshots: int = 16
    newton_tol: float = 1e-12
    max_steps: int = 400000
    dt_init: float | None = None
    regrid_ratio: float = 1.6          # regrid when cells exceed target by this
    pole_band_fraction: float = 0.08   # uniform band near poles, fraction of length
    grade_ratio: float = 1.12          # max growth of target spacing per cell


@dataclass
class Snapshot:
    t: float
    s: np.ndarray
    psi: np.ndarray
    xi: np.ndarray
    _curv: CurvatureField | None = field(default=None, repr=False)

    def metric(self, n: int, topology: Topology) -> WarpedMetric:
        return WarpedMetric(n, topology, self.s, self.psi, time=self.t, xi=self.xi)

    def curvature(self, n: int, topology: Topology) -> CurvatureField:
        if self._curv is None:
            self._curv = curvature_from_profile(n, topology, self.s, self.psi)
        return self._curv


@dataclass
class TypeIConstants:
    """Fitted Type I constants of a singular run.

    c_fit is the infimum of (T - t) sup|Rm| over the final recorded decade;
    C_fit the supremum over all recorded times.  A Type I singularity must
    keep the product above 1/8.
    """

    C_fit: float
    c_fit: float
    min_product: float
    products: np.ndarray
    lower_bound_ok: bool
    tolerance: float = 1e-3

    @property
    def bounded(self) -> bool:
        return math.isfinite(self.C_fit)


@dataclass
class SingularTimeFit:
    status: str                  # "ok" or "rate-undetermined"
    T_hat: float | None
    amplitude: float | None     # a in sup|Rm| ~ a / (T - t)
    exponent: float | None      # fitted power of (T - t), ~ -1 for Type I
    residual: float | None
    uncertainty: float | None
    consistency_gap: float | None


class FlowHistory:
    """Time-indexed metric snapshots with interpolation across time.

    Histories either wrap stored snapshots of a numerical run or delegate to
    a closed-form flow, in which case every evaluation is exact.  Quantities
    at intermediate times interpolate proportionally to their Type I scaling
    (curvatures as value * (T-t), positions linearly in log(T-t)).
    """

    def __init__(
        self,
        n: int,
        topology: Topology,
        snapshots: list[Snapshot],
        status: str,
        exact: ExactFlow | None = None,
        diagnostics: dict | None = None,
    ):
        self.n = n
        self.topology = topology
        self.snapshots = snapshots
        self.status = status
        self.exact = exact
        self.diagnostics = diagnostics or {}
        self.T_hat: float | None = exact.T if (exact is not None and exact.singular) else None
        self.time_fit: SingularTimeFit | None = None
        self.type_one: TypeIConstants | None = None
        self._interp_cache: dict[int, tuple] = {}

    # -- basic accessors -------------------------------------------------

    @property
    def times(self) -> np.ndarray:
        return np.array([snap.t for snap in self.snapshots])

    @property
    def singular(self) -> bool:
        return self.status == STATUS_SINGULAR

    @property
    def last_time(self) -> float:
        return self.snapshots[-1].t

    def material_domain(self) -> tuple[float, float]:
        xi = self.snapshots[0].xi
        return float(xi[0]), float(xi[-1])

    def eps_guard(self) -> float:
        """Guard gap for curves based at the singular time."""
        if self.exact is not None:
            return max(1e-7 * (self.T_hat or 1.0), 1e-12)
        last_dt = self.diagnostics.get("last_dt", 0.0)
        gap = (self.T_hat - self.last_time) if self.T_hat is not None else 0.0
        return max(4.0 * last_dt, 2.0 * gap)

    def curvature(self, index: int) -> CurvatureField:
        return self.snapshots[index].curvature(self.n, self.topology)

    def sup_riem_series(self) -> tuple[np.ndarray, np.ndarray]:
        ts = self.times
        if self.exact is not None:
            return ts, np.array([self.exact.riem_value(t) for t in ts])
        return ts, np.array([self.curvature(i).sup_riem for i in range(len(self.snapshots))])

    # -- interpolation in time -------------------------------------------

    def _lambda(self, t) -> np.ndarray:
        ts = np.asarray(t, dtype=float)
        if self.singular and self.T_hat is not None and self.T_hat > self.times[-1]:
            return np.log(self.T_hat - ts)
        return ts

    def _bracket(self, t: float) -> tuple[list[int], np.ndarray]:
        """Three snapshot indices around t and their Lagrange weights.

        Interpolation is quadratic in log(T - t) on singular histories (the
        recorded schedule is geometric there) and in t otherwise.
        """
        ts = self.times
        if t <= ts[0]:
            return [0], np.array([1.0])
        if t >= ts[-1]:
            return [len(ts) - 1], np.array([1.0])
        j = int(np.searchsorted(ts, t))
        i = j - 1
        if len(ts) < 3:
            w = (t - ts[i]) / (ts[j] - ts[i])
            return [i, j], np.array([1.0 - w, w])
        if j == len(ts) - 1:
            idx = [j - 2, j - 1, j]
        else:
            idx = [i, j, j + 1]
        lam = float(self._lambda(t))
        lams = self._lambda(ts[idx])
        weights = np.empty(3)
        for a in range(3):
            num = 1.0
            for b in range(3):
                if a != b:
                    num *= (lam - lams[b]) / (lams[a] - lams[b])
            weights[a] = num
        return idx, weights

    def _snap_interp(self, index: int):
        """(xi -> s, xi -> psi, xi -> R, xi -> |Rm|) linear interpolators."""
        if index not in self._interp_cache:
            snap = self.snapshots[index]
            cf = snap.curvature(self.n, self.topology)
            self._interp_cache[index] = (snap.xi, snap.s, snap.psi, cf.scalar, cf.riem_norm)
        return self._interp_cache[index]

    def position(self, xi, t: float) -> np.ndarray:
        """Arclength coordinate(s) at time t of material point(s) xi."""
        if self.exact is not None:
            return self.exact.position(xi, t)
        idx, weights = self._bracket(t)
        out = 0.0
        for i, w in zip(idx, weights):
            xi_i, s_i, *_ = self._snap_interp(i)
            out = out + w * np.interp(xi, xi_i, s_i)
        return out

    def psi_at(self, xi, t: float) -> np.ndarray:
        if self.exact is not None:
            g = self.exact
            if g.family is ExactFamily.SPHERE:
                r0 = g.radius(0.0)
                return g.radius(t) * np.sin(np.asarray(xi) / r0)
            return np.full(np.shape(xi), g.radius(t))
        idx, weights = self._bracket(t)
        out = 0.0
        for i, w in zip(idx, weights):
            xi_i, _, p_i, *_ = self._snap_interp(i)
            out = out + w * np.interp(xi, xi_i, p_i)
        return out

    def _field_at(self, xi, t: float, slot: int) -> np.ndarray:
        idx, weights = self._bracket(t)
        out = 0.0
        scaled = self.singular and self.T_hat is not None
        for i, w in zip(idx, weights):
            data = self._snap_interp(i)
            a = np.interp(xi, data[0], data[slot])
            if scaled:
                # interpolate the Type I product, which varies slowly
                a = a * (self.T_hat - self.snapshots[i].t)
            out = out + w * a
        if scaled:
            return out / (self.T_hat - t)
        return out

    def scalar_at(self, xi, t: float) -> np.ndarray:
        if self.exact is not None:
            return np.full(np.shape(xi) or (), self.exact.scalar_value(t))
        return self._field_at(xi, t, 3)

    def riem_at(self, xi, t: float) -> np.ndarray:
        if self.exact is not None:
            return np.full(np.shape(xi) or (), self.exact.riem_value(t))
        return self._field_at(xi, t, 4)

    def metric_at(self, t: float) -> WarpedMetric:
        if self.exact is not None:
            return self.exact.metric_at(t)
        idx, weights = self._bracket(t)
        if len(idx) == 1:
            snap = self.snapshots[idx[0]]
            return WarpedMetric(self.n, self.topology, snap.s, snap.psi, time=t, xi=snap.xi)
        xi = self.snapshots[idx[-1]].xi
        s = self.position(xi, t)
        psi = self.psi_at(xi, t)
        if self.topology.has_poles:
            psi = np.asarray(psi).copy()
            psi[0] = 0.0
            psi[-1] = 0.0
        return WarpedMetric(self.n, self.topology, s, psi, time=t, xi=xi)


# ---------------------------------------------------------------------------
# stepping


def _stretch_rate(n: int, topology: Topology, s: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Radial stretch rate (n-1) psi_ss / psi.

    psi_ss and psi both vanish linearly at a pole, so their ratio stays well
    conditioned; the pole value itself extrapolates the even function q from
    the first two interior nodes.  Pointwise noise in q is harmless because
    the stepper only consumes its integral.
    """
    psi = np.sqrt(np.clip(u, 0.0, None))
    _, psi_ss = profile_derivatives(s, psi, topology)
    q = np.zeros_like(u)
    if topology.has_poles:
        sl = slice(1, -1)
        q[sl] = (n - 1) * psi_ss[sl] / psi[sl]
        # node-level texture in psi is amplified by the ratio near a pole;
        # replace the zone by an even fit from the clean region (only the
        # integral of q is consumed, so the fit seam is immaterial)
        m = len(u)
        k_star = min(16, m // 6)
        w = min(16, m // 6)
        for left in (True, False):
            idx = np.arange(k_star, k_star + w)
            sig = (s[idx] - s[0]) if left else (s[-1] - s[::-1][idx])
            vals = q[idx] if left else q[::-1][idx]
            scale = sig[-1]
            basis = np.stack([np.ones_like(sig), (sig / scale) ** 2], axis=1)
            coef, *_ = np.linalg.lstsq(basis, vals, rcond=None)
            span = slice(0, k_star + w)
            sig_new = (s[span] - s[0]) if left else (s[-1] - s[::-1][span])
            fitted = coef[0] + coef[1] * (sig_new / scale) ** 2
            ramp = np.ones(k_star + w)
            ramp[k_star:] = 0.5 * (1.0 + np.cos(np.pi * (np.arange(w) + 0.5) / w))
            raw = q[span] if left else q[::-1][span]
            blended = ramp * fitted + (1.0 - ramp) * raw
            if left:
                q[: k_star + w] = blended
            else:
                q[m - k_star - w :] = blended[::-1]
    else:
        q[:] = (n - 1) * psi_ss / psi
        if topology.periodic:
            q[-1] = q[0]
    return q


def _rhs_u(n: int, topology: Topology, s: np.ndarray, u: np.ndarray, w: np.ndarray | None):
    """Velocity of u = psi^2 at fraction-pinned nodes.

    d u/dt = u_ss + (n-3)/2 u_s^2/u - 2(n-2) kF + w u_s, the last term being
    the mesh advection (w = 0 for material nodes).  The u form is free of the
    pole cancellation that plagues psi itself, and linear when n = 3 and the
    mesh is materially comoving.
    """
    kF = topology.fiber_curvature
    u_s, u_ss = u_derivatives(s, u, topology)
    F = np.zeros_like(u)
    if topology.has_poles:
        sl = slice(1, -1)
        F[sl] = u_ss[sl] + 0.5 * (n - 3) * u_s[sl] ** 2 / u[sl] - 2.0 * (n - 2) * kF
        if w is not None:
            F[sl] += w[sl] * u_s[sl]
    else:
        F[:] = u_ss + 0.5 * (n - 3) * u_s**2 / u - 2.0 * (n - 2) * kF
        if w is not None:
            F += w * u_s
        if topology.periodic:
            F[-1] = F[0]
    return F


def _u_jacobian_bands(n, topology, s, u, w, dt):
    """Tridiagonal I - dt/2 dF/du (3-point linearization, w frozen)."""
    if topology.periodic:
        sc = s[:-1]
        hm = np.empty(len(sc))
        hp = np.empty(len(sc))
        hm[1:] = np.diff(sc)
        hm[0] = s[-1] - sc[-1]
        hp[:-1] = np.diff(sc)
        hp[-1] = s[-1] - sc[-1]
        uc = u[:-1]
        um = np.roll(uc, 1)
        up_ = np.roll(uc, -1)
        wc = None if w is None else w[:-1]
    else:
        idx = np.arange(1, len(s) - 1)
        hm = s[idx] - s[idx - 1]
        hp = s[idx + 1] - s[idx]
        uc = u[idx]
        um = u[idx - 1]
        up_ = u[idx + 1]
        wc = None if w is None else w[idx]

    denom = hm * hp * (hm + hp)
    c_ss_m = 2.0 * hp / denom
    c_ss_0 = -2.0 * (hm + hp) / denom
    c_ss_p = 2.0 * hm / denom
    c_s_m = -(hp**2) / denom
    c_s_0 = (hp**2 - hm**2) / denom
    c_s_p = (hm**2) / denom
    u_s = c_s_m * um + c_s_0 * uc + c_s_p * up_

    if n == 3:
        adv = np.zeros_like(uc)
        extra = np.zeros_like(uc)
    else:
        safe = np.maximum(uc, 1e-14 * float(np.max(uc)) + 1e-300)
        adv = (n - 3) * u_s / safe
        extra = -0.5 * (n - 3) * u_s**2 / safe**2
    if wc is not None:
        adv = adv + wc
    dF_m = c_ss_m + adv * c_s_m
    dF_0 = c_ss_0 + adv * c_s_0 + extra
    dF_p = c_ss_p + adv * c_s_p
    return dF_m, dF_0, dF_p


def _uniform_pole_newton_bands_u(n, s, u, w, dt):
    """Pentadiagonal I - dt/2 dF/du on a uniform closed grid (even ghosts)."""
    h = s[1] - s[0]
    m = len(s) - 1
    idx = np.arange(1, m)
    u_s, _ = u_derivatives(s, u, Topology.SPHERE)
    uc = u[idx]

    a2 = -1.0 / (12.0 * h * h)
    a1 = 16.0 / (12.0 * h * h)
    a0 = -30.0 / (12.0 * h * h)
    b2m, b1m, b1p, b2p = 1.0 / (12.0 * h), -8.0 / (12.0 * h), 8.0 / (12.0 * h), -1.0 / (12.0 * h)

    if n == 3:
        adv = np.zeros_like(uc)
        extra = np.zeros_like(uc)
    else:
        safe = np.maximum(uc, 1e-14 * float(np.max(uc)) + 1e-300)
        adv = (n - 3) * u_s[idx] / safe
        extra = -0.5 * (n - 3) * u_s[idx] ** 2 / safe**2
    if w is not None:
        adv = adv + w[idx]
    A2m = a2 + adv * b2m
    A1m = a1 + adv * b1m
    A0 = a0 + extra
    A1p = a1 + adv * b1p
    A2p = a2 + adv * b2p

    # even ghost folding: u(-h) = u(h), u(L+h) = u(L-h); pole columns drop
    A0 = A0.copy()
    A0[0] += A2m[0]
    A0[-1] += A2p[-1]

    M = m - 1
    ab = np.zeros((5, M))
    ab[2, :] = 1.0 - 0.5 * dt * A0
    ab[1, 1:] = -0.5 * dt * A1p[:-1]
    ab[0, 2:] = -0.5 * dt * A2p[:-2]
    ab[3, :-1] = -0.5 * dt * A1m[1:]
    ab[4, :-2] = -0.5 * dt * A2m[2:]
    return ab


def _solve_cyclic_tridiag(lower, diag, upper, corner_ul, corner_lr, rhs):
    """Cyclic tridiagonal solve via the Sherman-Morrison correction."""
    m = len(diag)
    gamma = -diag[0]
    d = diag.copy()
    d[0] -= gamma
    d[-1] -= corner_ul * corner_lr / gamma
    ab = np.zeros((3, m))
    ab[0, 1:] = upper[:-1]
    ab[1, :] = d
    ab[2, :-1] = lower[1:]
    y = solve_banded((1, 1), ab, rhs)
    uvec = np.zeros(m)
    uvec[0] = gamma
    uvec[-1] = corner_lr
    z = solve_banded((1, 1), ab, uvec)
    fact = (y[0] + corner_ul * y[-1] / gamma) / (1.0 + z[0] + corner_ul * z[-1] / gamma)
    return y - fact * z


def _trapezoid_solve(n, topology, s_new, u_old, F_old, w_new, dt, newton_tol):
    """Solve u - u_old - dt/2 (F_old + F(u; s_new, w_new)) = 0 by damped Newton."""
    u = u_old + dt * F_old
    if topology.has_poles:
        u[0] = 0.0
        u[-1] = 0.0
        floor = 1e-12 * float(np.max(u_old))
        u[1:-1] = np.clip(u[1:-1], floor, None)
    elif not topology.periodic:
        u[0] = u_old[0]
        u[-1] = u_old[-1]
    scale = float(np.max(np.abs(u_old))) + 1e-300

    def residual(x):
        F_new = _rhs_u(n, topology, s_new, x, w_new)
        res = x - u_old - 0.5 * dt * (F_old + F_new)
        if topology.has_poles:
            res[0] = 0.0
            res[-1] = 0.0
        elif topology.periodic:
            res[-1] = 0.0
        else:
            res[0] = x[0] - u_old[0]
            res[-1] = x[-1] - u_old[-1]
        return res

    uniform_closed = topology.has_poles and np.allclose(
        np.diff(s_new), s_new[1] - s_new[0], rtol=1e-8, atol=0.0
    )

    res = residual(u)
    norm = float(np.max(np.abs(res)))
    for _ in range(30):
        if norm <= newton_tol * scale:
            return u, True
        if uniform_closed:
            ab = _uniform_pole_newton_bands_u(n, s_new, u, w_new, dt)
            try:
                delta = solve_banded((2, 2), ab, -res[1:-1])
            except Exception:
                return u, False
            step = np.zeros_like(u)
            step[1:-1] = delta
        elif topology.has_poles:
            dF_m, dF_0, dF_p = _u_jacobian_bands(n, topology, s_new, u, w_new, dt)
            m = len(s_new) - 2
            ab = np.zeros((3, m))
            ab[0, 1:] = (-0.5 * dt * dF_p)[:-1]
            ab[1, :] = 1.0 - 0.5 * dt * dF_0
            ab[2, :-1] = (-0.5 * dt * dF_m)[1:]
            try:
                delta = solve_banded((1, 1), ab, -res[1:-1])
            except Exception:
                return u, False
            step = np.zeros_like(u)
            step[1:-1] = delta
        elif topology.periodic:
            dF_m, dF_0, dF_p = _u_jacobian_bands(n, topology, s_new, u, w_new, dt)
            diag = 1.0 - 0.5 * dt * dF_0
            low = -0.5 * dt * dF_m
            up = -0.5 * dt * dF_p
            try:
                delta = _solve_cyclic_tridiag(low, diag, up, low[0], up[-1], -res[:-1])
            except Exception:
                return u, False
            step = np.concatenate((delta, [delta[0]]))
        else:
            dF_m, dF_0, dF_p = _u_jacobian_bands(n, topology, s_new, u, w_new, dt)
            m = len(s_new)
            ab = np.zeros((3, m))
            ab[0, 2:] = -0.5 * dt * dF_p
            ab[1, 0] = 1.0
            ab[1, 1:-1] = 1.0 - 0.5 * dt * dF_0
            ab[1, -1] = 1.0
            ab[2, :-2] = -0.5 * dt * dF_m
            try:
                delta = solve_banded((1, 1), ab, -res)
            except Exception:
                return u, False
            step = delta

        accepted = False
        beta = 1.0
        for _ in range(5):
            trial = u + beta * step
            if topology.has_poles:
                trial[0] = 0.0
                trial[-1] = 0.0
                bad = np.any(trial[1:-1] <= 0.0)
            else:
                bad = np.any(trial <= 0.0)
            if not bad:
                res_trial = residual(trial)
                norm_trial = float(np.max(np.abs(res_trial)))
                if norm_trial < norm or norm_trial <= newton_tol * scale:
                    u, res, norm = trial, res_trial, norm_trial
                    accepted = True
                    break
            beta *= 0.5
        if not accepted:
            return u, False
    return u, norm <= 10.0 * newton_tol * scale


def _advance(n, topology, s, u, dt, newton_tol):
    """One trapezoidal step of (positions, u) on the material mesh.

    Nodes are material points; their arclength coordinates move with the
    integrated stretch rate V(s), a smooth field, so no pointwise width
    noise enters the geometry.  Two correction rounds iterate the coupled
    trapezoid to within its own truncation order.
    """
    q0 = _stretch_rate(n, topology, s, u)
    V0 = _stretch_integral(s, q0)
    F0 = _rhs_u(n, topology, s, u, None)

    s_stage = s + dt * V0  # explicit predictor
    u_stage = None
    for _ in range(2):
        u_stage, ok = _trapezoid_solve(n, topology, s_stage, u, F0, None, dt, newton_tol)
        if not ok:
            return None
        q1 = _stretch_rate(n, topology, s_stage, u_stage)
        V1 = _stretch_integral(s_stage, q1)
        s_stage = s + 0.5 * dt * (V0 + V1)
    return s_stage, u_stage


def _stretch_integral(s: np.ndarray, q: np.ndarray) -> np.ndarray:
    """V(s) = integral of the stretch rate from the left end (V(s0) = 0)."""
    return np.concatenate(([0.0], np.cumsum(0.5 * (q[1:] + q[:-1]) * np.diff(s))))


def _regrid(n, topology, s_in, u, xi, cfg: FlowConfig):
    """Choose new node fractions adapted to the curvature of the profile.

    The target spacing is alpha / sqrt(|Rm|), graded so neighboring targets
    differ by at most the configured ratio, uniform within a band near each
    pole, and bounded so at least min_points survive.  u and the material
    labels are resampled monotonically.
    """
    s = s_in
    L = float(s[-1] - s[0])
    psi = np.sqrt(np.clip(u, 0.0, None))
    cf = curvature_from_profile(n, topology, s, psi)
    h_hi = L / max(cfg.min_points - 1, 8)
    h_lo = max(cfg.grid_floor, L / cfg.max_points)
    target = cfg.resolution_alpha / np.sqrt(cf.riem_norm + (1.0 / L) ** 2)
    target = np.clip(target, h_lo, h_hi)

    for i in range(1, len(target)):
        cap = target[i - 1] * cfg.grade_ratio
        if target[i] > cap:
            target[i] = cap
    for i in range(len(target) - 2, -1, -1):
        cap = target[i + 1] * cfg.grade_ratio
        if target[i] > cap:
            target[i] = cap

    if topology.has_poles:
        band = cfg.pole_band_fraction * L
        left = s - s[0] <= band
        right = s[-1] - s <= band
        if np.any(left):
            target[left] = float(np.min(target[left]))
        if np.any(right):
            target[right] = float(np.min(target[right]))

    density = 1.0 / target
    mass = np.concatenate(([0.0], np.cumsum(0.5 * (density[1:] + density[:-1]) * np.diff(s))))
    total = mass[-1]
    count = int(np.ceil(total))
    count = max(count, cfg.min_points - 1)
    count = min(count, cfg.max_points)
    levels = np.linspace(0.0, total, count + 1)
    s_new = np.interp(levels, mass, s)
    s_new[0] = s[0]
    s_new[-1] = s[-1]

    if topology.has_poles:
        band = cfg.pole_band_fraction * L
        kL = int(np.searchsorted(s_new, s[0] + band))
        if kL >= 2:
            s_new[:kL] = s_new[0] + (s_new[kL] - s_new[0]) * np.arange(kL) / kL
        kR = int(np.searchsorted(s_new, s[-1] - band))
        if len(s_new) - kR >= 3:
            width = s_new[-1] - s_new[kR]
            cells = len(s_new) - 1 - kR
            s_new[kR:] = s_new[-1] - width * np.arange(cells, -1, -1) / cells

    psi_interp = PchipInterpolator(s, psi)
    xi_interp = PchipInterpolator(s, xi)
    psi_new = psi_interp(s_new)
    xi_new = xi_interp(s_new)
    if topology.has_poles:
        psi_new[0] = 0.0
        psi_new[-1] = 0.0
        xi_new[0] = xi[0]
        xi_new[-1] = xi[-1]
    elif topology.periodic:
        psi_new[-1] = psi_new[0]
        xi_new[-1] = xi[-1]
    return s_new, psi_new**2, xi_new


def _needs_regrid(topology, s, cfg: FlowConfig, cf: CurvatureField) -> bool:
    L = s[-1] - s[0]
    h_hi = L / max(cfg.min_points - 1, 8)
    h_lo = max(cfg.grid_floor, L / cfg.max_points)
    target = np.clip(cfg.resolution_alpha / np.sqrt(cf.riem_norm + (1.0 / L) ** 2), h_lo, h_hi)
    widths = np.diff(s)
    tmid = 0.5 * (target[:-1] + target[1:])
    if np.any(widths > cfg.regrid_ratio * tmid):
        return True
    if len(s) > 3 * cfg.min_points and np.all(widths < 0.3 * tmid):
        return True
    return False


def evolve(initial: WarpedMetric, config: FlowConfig | None = None) -> FlowHistory:
    """Run the flow from ``initial`` until blow-up or the configured end.

    Returns a history whose status is "singularity-reached" when the stop
    criterion sup|Rm| >= stop_sup_riem fired (or the step size underflowed
    while curvature grew), and "time-limit" when t_final was reached first.
    """
    cfg = config or FlowConfig()
    n = initial.n
    topology = initial.topology
    s = initial.grid.astype(float) - float(initial.grid[0])
    u = initial.psi.astype(float) ** 2
    xi = initial.material().astype(float).copy()
    psi = np.sqrt(np.clip(u, 0.0, None))

    cf = curvature_from_profile(n, topology, s, psi)
    if _needs_regrid(topology, s, cfg, cf):
        s, u, xi = _regrid(n, topology, s, u, xi, cfg)
        psi = np.sqrt(np.clip(u, 0.0, None))
        cf = curvature_from_profile(n, topology, s, psi)

    t = float(initial.time)
    snapshots = [Snapshot(t=t, s=s.copy(), psi=psi.copy(), xi=xi.copy())]
    sup0 = cf.sup_riem
    thresh_factor = 10.0 ** (1.0 / cfg.per_decade_snapshots)
    next_thresh = max(sup0, 1e-30) * thresh_factor
    time_gap = 0.25 / max(sup0, 1e-30)
    next_time_mark = t + time_gap

    dt = cfg.dt_init if cfg.dt_init is not None else 0.01 * cfg.sigma / max(sup0, 1e-30)
    dt_floor = 1e-13 * max(dt, 1e-30) if cfg.t_final is None else 1e-16 * cfg.t_final
    status = STATUS_TIME_LIMIT
    steps = rejects = regrids = 0
    static_run = 0
    last_dt = dt

    while steps < cfg.max_steps:
        sup = cf.sup_riem
        if sup >= cfg.stop_sup_riem:
            status = STATUS_SINGULAR
            break
        if cfg.t_final is not None and t >= cfg.t_final - 1e-15:
            status = STATUS_TIME_LIMIT
            break

        dt = min(dt, cfg.sigma / max(sup, 1e-30))
        if cfg.t_final is not None:
            dt = min(dt, cfg.t_final - t)
        if dt <= dt_floor:
            status = STATUS_SINGULAR if sup > 100.0 * sup0 else STATUS_TIME_LIMIT
            break

        full = _advance(n, topology, s, u, dt, cfg.newton_tol)
        half = _advance(n, topology, s, u, 0.5 * dt, cfg.newton_tol)
        fine = (
            _advance(n, topology, half[0], half[1], 0.5 * dt, cfg.newton_tol)
            if half
            else None
        )
        if full is None or fine is None:
            dt *= 0.25
            rejects += 1
            if dt <= dt_floor:
                status = STATUS_SINGULAR if sup > 100.0 * sup0 else STATUS_TIME_LIMIT
                break
            continue

        psi_fine = np.sqrt(np.clip(fine[1], 0.0, None))
        psi_full = np.sqrt(np.clip(full[1], 0.0, None))
        scale_vec = psi_fine + 0.01 * float(np.max(psi_fine))
        rel = np.abs(psi_full - psi_fine) / scale_vec
        if topology.has_poles:
            # the few pole-adjacent nodes carry harmless solve texture well
            # below any quantity of interest; do not let it set the step
            zone = min(18, len(rel) // 6)
            err = float(np.max(rel[zone:-zone]))
            err_pole = float(max(np.max(rel[:zone]), np.max(rel[-zone:])))
            if err_pole > 1e-3:
                err = max(err, err_pole)
        else:
            err = float(np.max(rel))
        err = max(err, float(np.max(np.abs(full[0] - fine[0]))) / float(fine[0][-1] - fine[0][0]))
        if not math.isfinite(err):
            raise SolverInstabilityError("non-finite step error", t, steps)
        if err > cfg.step_rtol:
            dt *= max(0.2, 0.9 * (cfg.step_rtol / err) ** (1.0 / 3.0))
            rejects += 1
            continue

        # accept the fine solution: extrapolating the doubling pair would
        # trade A-stability for order (stiff modes would grow by 5/3 per
        # step), so the positions, a smooth integral, are extrapolated but
        # the field itself is not
        u = fine[1]
        s = fine[0] + (fine[0] - full[0]) / 3.0
        if topology.has_poles:
            u[0] = 0.0
            u[-1] = 0.0
            bad = np.any(u[1:-1] <= 0.0)
        else:
            bad = np.any(u <= 0.0)
        if bad or not np.all(np.isfinite(u)) or np.any(np.diff(s) <= 0.0):
            raise SolverInstabilityError("nonpositive or non-finite state", t, steps)
        psi = np.sqrt(np.clip(u, 0.0, None))

        t += dt
        last_dt = dt
        steps += 1
        if err > 0.0:
            dt = dt * min(1.7, max(0.3, 0.85 * (cfg.step_rtol / err) ** (1.0 / 3.0)))
        else:
            dt *= 1.7

        cf = curvature_from_profile(n, topology, s, psi)
        sup = cf.sup_riem
        if abs(sup - sup0) <= 1e-12 * max(sup0, 1e-30):
            static_run += 1
            if static_run > 500 and cfg.t_final is None:
                status = STATUS_STATIC
                break

        recorded = False
        while sup >= next_thresh:
            next_thresh *= thresh_factor
            recorded = True
        if t >= next_time_mark:
            next_time_mark += time_gap
            recorded = True
        if recorded:
            snapshots.append(Snapshot(t=t, s=s.copy(), psi=psi.copy(), xi=xi.copy()))

        if steps % 4 == 0 and _needs_regrid(topology, s, cfg, cf):
            s, u, xi = _regrid(n, topology, s, u, xi, cfg)
            psi = np.sqrt(np.clip(u, 0.0, None))
            cf = curvature_from_profile(n, topology, s, psi)
            regrids += 1

    if snapshots[-1].t < t:
        snapshots.append(Snapshot(t=t, s=s.copy(), psi=psi.copy(), xi=xi.copy()))

    history = FlowHistory(
        n=n,
        topology=topology,
        snapshots=snapshots,
        status=status,
        diagnostics={
            "steps": steps,
            "rejects": rejects,
            "regrids": regrids,
            "last_dt": last_dt,
            "final_sup_riem": float(cf.sup_riem),
            "final_points": len(s),
        },
    )
    if history.singular:
        fit = estimate_singular_time(history)
        history.time_fit = fit
        if fit.status == "ok":
            history.T_hat = fit.T_hat
            history.type_one = type_one_constants(history, fit.T_hat)
    return history


# ---------------------------------------------------------------------------
# exact histories and initial data


def exact_history(
    flow: ExactFlow,
    tau_min: float | None = None,
    t_end: float | None = None,
    per_decade: int = 16,
) -> FlowHistory:
    """History backed by a closed-form flow; evaluations are exact.

    For singular families the snapshot times are geometric in T - t down to
    tau_min; the flat family gets a uniform schedule up to t_end.
    """
    if flow.singular:
        tau_hi = flow.T
        tau_lo = tau_min if tau_min is not None else 1e-8 * flow.T
        decades = math.log10(tau_hi / tau_lo)
        count = max(2, int(math.ceil(decades * per_decade)))
        taus = tau_hi * (tau_lo / tau_hi) ** (np.arange(count + 1) / count)
        times = flow.T - taus
        status = STATUS_SINGULAR
    else:
        end = t_end if t_end is not None else 1.0
        times = np.linspace(0.0, end, 33)
        status = STATUS_STATIC

    snaps = []
    for t in times:
        g = flow.metric_at(float(t))
        snaps.append(Snapshot(t=float(t), s=g.grid, psi=g.psi, xi=g.material()))
    history = FlowHistory(flow.n, flow.topology, snaps, status, exact=flow)
    if history.singular:
        history.type_one = type_one_constants(history, flow.T)
    return history


def dumbbell_profile(
    n: int = 3,
    neck: float = 1.0,
    bulb: float = 7.0,
    grid_points: int = 801,
) -> WarpedMetric:
    """Two-bulb closed profile that pinches at the equator.

    psi(theta) = sqrt(2(n-2)) (neck + bulb cos^2 theta) sin(theta) on a round
    parameter theta, scaled so the poles close smoothly.  The neck radius is
    sqrt(2(n-2)) * neck, so the pinch time is roughly neck^2 for moderate
    bulb/neck ratios; the default pinches somewhat after t = 1, which keeps
    the rate-band bounds in their applicable regime k (T - t) >= k T > 1.
    """
    amp = math.sqrt(2.0 * (n - 2))
    c = amp * (neck + bulb)
    theta = np.linspace(0.0, math.pi, grid_points)
    s = c * theta
    psi = amp * (neck + bulb * np.cos(theta) ** 2) * np.sin(theta)
    psi[0] = 0.0
    psi[-1] = 0.0
    return WarpedMetric(n, Topology.SPHERE, s, psi, time=0.0, xi=s)


# ---------------------------------------------------------------------------
# singular time and Type I constants


def estimate_singular_time(history: FlowHistory) -> SingularTimeFit:
    """Fit sup|Rm| ~ a / (T - t) over the final recorded decade.

    T_hat minimizes the least squares residual of log sup|Rm| against
    log(T_hat - t) with a free slope; the slope itself is reported as the
    blow-up exponent (close to -1 for a Type I run).
    """
    undetermined = SingularTimeFit("rate-undetermined", None, None, None, None, None, None)
    if not history.singular:
        return undetermined
    ts, ks = history.sup_riem_series()
    k_last = ks[-1]
    window = ks >= 0.1 * k_last
    ts = ts[window]
    ks = ks[window]
    if len(ts) < 5 or np.any(ks <= 0.0):
        return undetermined

    t_last = ts[-1]
    # seed from the linear model 1/K = (T - t)/a
    y = 1.0 / ks
    slope, intercept = np.polyfit(ts, y, 1)
    if slope >= 0.0:
        return undetermined
    T0 = -intercept / slope
    if T0 <= t_last:
        T0 = t_last + y[-1] / (-slope)

    logk = np.log(ks)

    def sse(T: float) -> float:
        if T <= t_last:
            return 1e300
        x = np.log(T - ts)
        m, b = np.polyfit(x, logk, 1)
        r = logk - (m * x + b)
        return float(r @ r)

    gap0 = max(T0 - t_last, 1e-300)

    def sse_log(theta: float) -> float:
        return sse(t_last + math.exp(theta))

    res = minimize_scalar(
        sse_log,
        bounds=(math.log(gap0) - 7.0, math.log(gap0) + 4.0),
        method="bounded",
        options={"xatol": 1e-12},
    )
    T_hat = t_last + math.exp(float(res.x))
    x = np.log(T_hat - ts)
    m, b = np.polyfit(x, logk, 1)
    fitres = float(np.sqrt(np.mean((logk - (m * x + b)) ** 2)))
    if fitres > 0.25:
        return undetermined
    amplitude = float(np.exp(np.mean(logk + x)))  # constrained slope -1
    consistency = float(abs(t_last + amplitude / ks[-1] - T_hat))
    uncertainty = float(abs(T_hat - T0) + fitres * (T_hat - t_last))
    return SingularTimeFit(
        status="ok",
        T_hat=T_hat,
        amplitude=amplitude,
        exponent=float(-m),
        residual=fitres,
        uncertainty=uncertainty,
        consistency_gap=consistency,
    )


def type_one_constants(history: FlowHistory, T_hat: float, tolerance: float = 1e-3) -> TypeIConstants:
    """Products (T_hat - t) sup|Rm| over the recorded times, and their bounds."""
    ts, ks = history.sup_riem_series()
    keep = ts < T_hat
    taus = T_hat - ts[keep]
    products = taus * ks[keep]
    tau_last = taus[-1]
    final = taus <= 10.0 * tau_last
    c_fit = float(np.min(products[final]))
    C_fit = float(np.max(products))
    min_all = float(np.min(products))
    return TypeIConstants(
        C_fit=C_fit,
        c_fit=c_fit,
        min_product=min_all,
        products=products,
        lower_bound_ok=bool(min_all >= 0.125 - tolerance),
        tolerance=tolerance,
    )


def volume_identity_residuals(
    history: FlowHistory,
    xi_lo: float,
    xi_hi: float,
    indices: Sequence[int] | None = None,
) -> np.ndarray:
    """Relative defect of d/dt Vol(A) = -int_A R dvol for a material region A.

    Checked between consecutive snapshots with the trapezoid in time; the
    residual is normalized by the volume change plus the integral scale.
    """
    from .geometry import fiber_volume_factor

    w = fiber_volume_factor(history.n, history.topology)
    idx = list(indices) if indices is not None else list(range(len(history.snapshots) - 1))

    def band_volume_and_integral(i: int) -> tuple[float, float]:
        snap = history.snapshots[i]
        cf = history.curvature(i)
        lo = float(np.interp(xi_lo, snap.xi, snap.s))
        hi = float(np.interp(xi_hi, snap.xi, snap.s))
        inside = (snap.s >= lo) & (snap.s <= hi)
        s_band = snap.s[inside]
        if len(s_band) < 2:
            return 0.0, 0.0
        dens = w * snap.psi[inside] ** (history.n - 1)
        vol = float(np.trapezoid(dens, s_band))
        rint = float(np.trapezoid(cf.scalar[inside] * dens, s_band))
        return vol, rint

    out = []
    cache: dict[int, tuple[float, float]] = {}
    for i in idx:
        if i + 1 >= len(history.snapshots):
            continue
        for j in (i, i + 1):
            if j not in cache:
                cache[j] = band_volume_and_integral(j)
        v0, r0 = cache[i]
        v1, r1 = cache[i + 1]
        dt = history.snapshots[i + 1].t - history.snapshots[i].t
        lhs = v1 - v0
        rhs = -0.5 * (r0 + r1) * dt
        scale = abs(lhs) + abs(rhs) + 1e-300
        out.append(abs(lhs - rhs) / scale)
    return np.array(out)
