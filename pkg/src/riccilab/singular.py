"""Singular-set classification, rescaling, and blow-up profiles.

Five nested notions of singular point are evaluated per material point of a
singular run, all from curvature samples over the final recorded decade:

    scalar_rate     R (T-t) stays above the rate floor at every sampled time
    curvature_rate  same with |Rm|
    fixed_witness   some late sample has |Rm| (T-t) above the floor at the
                    point itself
    moving_witness  same, allowing witnesses in a neighborhood shrinking
                    with sqrt(T-t)
    unbounded       every nested neighborhood sees late Type I rate growth

The thresholds are scaled so the inclusions hold structurally: the scalar
curvature satisfies R <= sqrt(n(n-1)/2) |Rm| pointwise in this norm
convention, so the |Rm|-based floors use the correspondingly reduced value,
and the moving-witness neighborhoods are capped by the smallest fixed ball.
The discrete criteria then make the nesting checkable as boolean
implications per point, and the coincidence theorem shows up as the five
sets agreeing up to a small boundary layer.

Parabolic rescaling realizes the zoom g_j(t) = lam g(T + t/lam); blow-up
profiles extract psi around a point in rescaled arclength at t = -1 and
compare against the self-similar models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import WarpedMetric, curvature_from_profile, fiber_volume_factor
from .flow import FlowHistory

__all__ = [
    "SingularSetReport",
    "CoincidenceReport",
    "RateBandDecomposition",
    "RescaledHistory",
    "ProfileComparison",
    "rate_norm_factor",
    "classify_singular_points",
    "coincidence_check",
    "rate_band_decomposition",
    "volume_decay",
    "parabolic_rescale",
    "blowup_profile",
]

SET_NAMES = ("scalar_rate", "curvature_rate", "fixed_witness", "moving_witness", "unbounded")


def rate_norm_factor(n: int) -> float:
    """Pointwise bound R <= c(n) |Rm| in this norm convention (sphere-tight)."""
    return math.sqrt(n * (n - 1) / 2.0)


@dataclass
class SingularSetReport:
    points_xi: np.ndarray
    flags: dict[str, np.ndarray]
    a_scalar: np.ndarray        # lim inf proxy of R (T-t) over the final half decade
    a_riem: np.ndarray          # same for |Rm| (T-t)
    rate_floor: float
    riem_floor: float
    window_taus: np.ndarray
    initial_ball_radius: float
    reliable: bool
    norm_convention: str
    rho_stable: bool | None = None

    def members(self, name: str) -> np.ndarray:
        return self.points_xi[self.flags[name]]

    def nesting_holds(self) -> bool:
        for a, b in zip(SET_NAMES[:-1], SET_NAMES[1:]):
            if np.any(self.flags[a] & ~self.flags[b]):
                return False
        return True


@dataclass
class CoincidenceReport:
    agree: bool
    max_layer_width: int
    interior_disagreements: int
    union_size: int
    intersection_size: int


@dataclass
class RateBandDecomposition:
    levels: np.ndarray
    memberships: dict[int, np.ndarray]
    c_tilde: float
    integral_bound_ok: bool
    integral_margin: float
    volume_bound_ok: bool
    volume_margin: float
    volumes: dict[int, np.ndarray]
    sampled_times: np.ndarray


@dataclass
class ProfileComparison:
    family: str
    nontrivial: bool
    base_riem_rescaled: float
    base_scalar_rescaled: float
    distances: dict[str, float]
    window: float
    window_flagged: bool
    lambdas: np.ndarray
    profile_s: np.ndarray
    profile_psi: np.ndarray
    model_psi: np.ndarray


# ---------------------------------------------------------------------------
# classification


def _window_indices(history: FlowHistory, decades: float) -> np.ndarray:
    T = history.T_hat
    taus = T - history.times
    tau_last = float(np.min(taus[taus > 0]))
    keep = (taus > 0) & (taus <= tau_last * 10.0**decades)
    return np.nonzero(keep)[0]


def _curvature_samples(history: FlowHistory, idx: np.ndarray, points: np.ndarray):
    taus = np.empty(len(idx))
    Rs = np.empty((len(idx), len(points)))
    Rm = np.empty((len(idx), len(points)))
    for row, i in enumerate(idx):
        snap = history.snapshots[i]
        cf = history.curvature(i)
        Rs[row] = np.interp(points, snap.xi, cf.scalar)
        Rm[row] = np.interp(points, snap.xi, cf.riem_norm)
        taus[row] = history.T_hat - snap.t
    return taus, Rs, Rm


def classify_singular_points(
    history: FlowHistory,
    rate_floor: float = 1e-2,
    points: np.ndarray | None = None,
    neighborhood_radius: float | None = None,
    neighborhood_halvings: int = 4,
    check_rho_stability: bool = True,
) -> SingularSetReport:
    """Per-point membership in the five nested singular sets.

    Needs a singular run with at least three decades of snapshots; fewer
    decades mark the report unreliable.  Results must not change when the
    rate floor moves by one order of magnitude, which is checked as well.
    """
    if not history.singular or history.T_hat is None:
        # bounded curvature for all time: every singular set is empty
        if points is None:
            lo, hi = history.material_domain()
            points = np.linspace(lo, hi, 257)
        points = np.asarray(points, dtype=float)
        empty = {name: np.zeros(len(points), dtype=bool) for name in SET_NAMES}
        from .geometry import RM_NORM_CONVENTION

        return SingularSetReport(
            points_xi=points,
            flags=empty,
            a_scalar=np.zeros(len(points)),
            a_riem=np.zeros(len(points)),
            rate_floor=rate_floor,
            riem_floor=rate_floor / rate_norm_factor(history.n),
            window_taus=np.array([]),
            initial_ball_radius=0.0,
            reliable=True,
            norm_convention=RM_NORM_CONVENTION,
            rho_stable=True,
        )
    T = history.T_hat
    taus_all = T - history.times
    tau_last = float(np.min(taus_all[taus_all > 0]))
    decades = math.log10((T - history.times[0]) / tau_last)
    reliable = decades >= 3.0

    idx_full = _window_indices(history, 1.0)
    idx_half = _window_indices(history, 0.5)

    if points is None:
        lo, hi = history.material_domain()
        points = np.linspace(lo, hi, 257)
    points = np.asarray(points, dtype=float)

    taus_f, R_f, Rm_f = _curvature_samples(history, idx_full, points)
    taus_h, _, Rm_h = _curvature_samples(history, idx_half, points)

    rho = rate_floor
    rho_rm = rate_floor / rate_norm_factor(history.n)

    a_scalar = np.min(
        _curvature_samples(history, idx_half, points)[1] * taus_h[:, None], axis=0
    )
    a_riem = np.min(Rm_h * taus_h[:, None], axis=0)

    def flags_for(rho_val: float) -> dict[str, np.ndarray]:
        rho_rm_val = rho_val / rate_norm_factor(history.n)
        scalar_rate = np.min(R_f * taus_f[:, None], axis=0) >= rho_val
        curvature_rate = np.min(Rm_f * taus_f[:, None], axis=0) >= rho_rm_val
        fixed_witness = np.max(Rm_h * taus_h[:, None], axis=0) >= rho_rm_val

        g0 = history.snapshots[0]
        s0_points = np.interp(points, g0.xi, g0.s)
        lo, hi = history.material_domain()
        span0 = float(np.interp(hi, g0.xi, g0.s) - np.interp(lo, g0.xi, g0.s))
        r0 = neighborhood_radius if neighborhood_radius is not None else 0.05 * span0
        r_min_ball = r0 / 2.0**neighborhood_halvings
        tau0 = float(np.max(taus_h))

        moving = np.zeros(len(points), dtype=bool)
        level_hits = np.zeros((neighborhood_halvings + 1, len(points)), dtype=bool)
        for row, i in enumerate(idx_half):
            snap = history.snapshots[i]
            cf = history.curvature(i)
            tau = T - snap.t
            s0_grid = np.interp(snap.xi, g0.xi, g0.s)
            strong = s0_grid[cf.riem_norm * tau >= rho_rm_val]
            if len(strong) == 0:
                continue
            dist = np.abs(strong[None, :] - s0_points[:, None])
            nearest = np.min(dist, axis=1)
            radius = min(r_min_ball, r0 * math.sqrt(tau / tau0))
            moving |= nearest <= radius
            for kb in range(neighborhood_halvings + 1):
                level_hits[kb] |= nearest <= r0 / 2.0**kb
        unbounded = np.all(level_hits, axis=0)
        moving |= fixed_witness  # a point witnesses itself
        unbounded |= moving
        return {
            "scalar_rate": scalar_rate,
            "curvature_rate": curvature_rate,
            "fixed_witness": fixed_witness,
            "moving_witness": moving,
            "unbounded": unbounded,
        }, r0

    flags, r0 = flags_for(rho)
    rho_stable = None
    if check_rho_stability:
        lo_flags, _ = flags_for(rho / math.sqrt(10.0))
        hi_flags, _ = flags_for(rho * math.sqrt(10.0))
        rho_stable = all(
            _flags_match_up_to_layer(flags[name], lo_flags[name])
            and _flags_match_up_to_layer(flags[name], hi_flags[name])
            for name in SET_NAMES
        )

    from .geometry import RM_NORM_CONVENTION

    return SingularSetReport(
        points_xi=points,
        flags=flags,
        a_scalar=a_scalar,
        a_riem=a_riem,
        rate_floor=rho,
        riem_floor=rho_rm,
        window_taus=taus_f,
        initial_ball_radius=r0,
        reliable=reliable,
        norm_convention=RM_NORM_CONVENTION,
        rho_stable=rho_stable,
    )



def _flags_match_up_to_layer(a: np.ndarray, b: np.ndarray, layer: int = 2) -> bool:
    """Boolean masks equal except within ``layer`` cells of a boundary of either."""
    diff = a != b
    if not np.any(diff):
        return True
    boundary = np.zeros(len(a), dtype=bool)
    for mask in (a, b):
        edges = np.nonzero(np.diff(mask.astype(int)) != 0)[0]
        for e in edges:
            boundary[max(0, e - layer + 1) : min(len(a), e + layer + 1)] = True
    return bool(np.all(~diff | boundary))


def coincidence_check(report: SingularSetReport, layer_cells: int = 2) -> CoincidenceReport:
    """Verify the five sets agree up to a boundary layer.

    Points where the sets disagree must lie within ``layer_cells`` grid cells
    of the boundary of the union; interior disagreements falsify the
    implementation, not the theorems.
    """
    union = np.zeros(len(report.points_xi), dtype=bool)
    inter = np.ones(len(report.points_xi), dtype=bool)
    for name in SET_NAMES:
        union |= report.flags[name]
        inter &= report.flags[name]
    disagree = union & ~inter

    boundary = np.zeros_like(union)
    u = union.astype(int)
    edges = np.nonzero(np.diff(u) != 0)[0]
    for e in edges:
        lo = max(0, e - layer_cells + 1)
        hi = min(len(u), e + layer_cells + 1)
        boundary[lo:hi] = True

    interior_bad = int(np.count_nonzero(disagree & ~boundary))
    widths = []
    run = 0
    for d in disagree:
        if d:
            run += 1
        else:
            if run:
                widths.append(run)
            run = 0
    if run:
        widths.append(run)
    return CoincidenceReport(
        agree=interior_bad == 0,
        max_layer_width=max(widths) if widths else 0,
        interior_disagreements=interior_bad,
        union_size=int(np.count_nonzero(union)),
        intersection_size=int(np.count_nonzero(inter)),
    )


# ---------------------------------------------------------------------------
# rate bands and volume decay


def _band_volume(history: FlowHistory, index: int, mask: np.ndarray, points: np.ndarray) -> float:
    """Volume at snapshot ``index`` of the material set marked by ``mask``.

    The set is a union of intervals between classification points; each
    interval is mapped to current arclength and integrated.
    """
    if not np.any(mask):
        return 0.0
    snap = history.snapshots[index]
    w = fiber_volume_factor(history.n, history.topology)
    dens_grid = w * snap.psi ** (history.n - 1)
    total = 0.0
    j = 0
    m = len(points)
    while j < m:
        if not mask[j]:
            j += 1
            continue
        k = j
        while k + 1 < m and mask[k + 1]:
            k += 1
        xi_lo = points[j] if j == 0 else 0.5 * (points[j - 1] + points[j])
        xi_hi = points[k] if k == m - 1 else 0.5 * (points[k] + points[k + 1])
        s_lo = float(np.interp(xi_lo, snap.xi, snap.s))
        s_hi = float(np.interp(xi_hi, snap.xi, snap.s))
        inside = (snap.s >= s_lo) & (snap.s <= s_hi)
        ss = np.concatenate(([s_lo], snap.s[inside], [s_hi]))
        dd = np.interp(ss, snap.s, dens_grid)
        total += float(np.trapezoid(dd, ss))
        j = k + 1
    return total


def rate_band_decomposition(
    history: FlowHistory,
    report: SingularSetReport,
    k_max: int = 6,
    points: np.ndarray | None = None,
) -> RateBandDecomposition:
    """Decompose the scalar-rate set into bands by rate level.

    Band k holds the points with R(t) >= (1/k)/(T-t) for every sampled time
    in (T - 1/k, T).  On each band the time integral of R is bounded below
    by -C~ T + log((1/k)/(T-t))^{1/k}, and the volume of a band at time t is
    bounded by 2 e^{C~ T} (T-t)^{1/k} times its initial volume; both bounds
    are checked at all sampled pairs.
    """
    T = history.T_hat
    if points is None:
        # band volumes need cells resolving the singular zone, so work on the
        # final (curvature-adapted) grid rather than the coarse report points
        points = history.snapshots[-1].xi
    times = history.times
    cf0 = history.curvature(0)
    c_tilde = max(0.0, -float(np.min(cf0.scalar))) + 1e-12

    # R at the classification points across all snapshots
    R_t = np.empty((len(times), len(points)))
    for i in range(len(times)):
        snap = history.snapshots[i]
        cf = history.curvature(i)
        R_t[i] = np.interp(points, snap.xi, cf.scalar)
    taus = T - times

    memberships: dict[int, np.ndarray] = {}
    for k in range(1, k_max + 1):
        window = (times > T - 1.0 / k) & (taus > 0)
        if not np.any(window):
            memberships[k] = np.zeros(len(points), dtype=bool)
            continue
        need = (1.0 / k) / taus[window]
        memberships[k] = np.all(R_t[window] >= need[:, None] - 1e-12, axis=0)

    # time integral of R along each member point (trapezoid over snapshots)
    int_margin = math.inf
    int_ok = True
    cum = np.concatenate(
        (np.zeros((1, len(points))), np.cumsum(0.5 * (R_t[1:] + R_t[:-1]) * np.diff(times)[:, None], axis=0))
    )
    for k in range(1, k_max + 1):
        mask = memberships[k]
        if not np.any(mask):
            continue
        for i in range(1, len(times)):
            if taus[i] <= 0:
                continue
            bound = -c_tilde * T + (1.0 / k) * math.log((1.0 / k) / taus[i])
            margin = float(np.min(cum[i][mask]) - bound)
            int_margin = min(int_margin, margin)
            if margin < -1e-6:
                int_ok = False

    # volume bound for the band differences
    vol_margin = math.inf
    vol_ok = True
    volumes: dict[int, np.ndarray] = {}
    prev = np.zeros(len(points), dtype=bool)
    for k in range(1, k_max + 1):
        band = memberships[k] & ~prev
        series = np.array([_band_volume(history, i, band, points) for i in range(len(times))])
        volumes[k] = series
        v0 = series[0]
        for i in range(len(times)):
            if taus[i] <= 0 or v0 == 0.0:
                continue
            bound = 2.0 * math.exp(c_tilde * T) * taus[i] ** (1.0 / k) * v0
            margin = float(bound - series[i])
            vol_margin = min(vol_margin, margin / max(v0, 1e-300))
            if series[i] > bound * (1.0 + 1e-9):
                vol_ok = False
        prev = prev | memberships[k]

    return RateBandDecomposition(
        levels=np.arange(1, k_max + 1),
        memberships=memberships,
        c_tilde=c_tilde,
        integral_bound_ok=int_ok,
        integral_margin=float(int_margin),
        volume_bound_ok=vol_ok,
        volume_margin=float(vol_margin),
        volumes=volumes,
        sampled_times=times,
    )


def volume_decay(history: FlowHistory, report: SingularSetReport, set_name: str = "unbounded"):
    """Volume series of a singular set, its decay exponent, and final ratio."""
    mask = report.flags[set_name]
    times = history.times
    series = np.array([_band_volume(history, i, mask, report.points_xi) for i in range(len(times))])
    T = history.T_hat
    if T is None:
        return times, series, None, (float(series[-1] / series[0]) if series[0] > 0 else 0.0)
    taus = T - times
    keep = (series > 0) & (taus > 0)
    exponent = None
    if np.count_nonzero(keep) >= 4:
        tail = keep & (taus <= 10.0 * float(np.min(taus[keep])))
        if np.count_nonzero(tail) >= 3:
            slope, _ = np.polyfit(np.log(taus[tail]), np.log(series[tail]), 1)
            exponent = float(slope)
    ratio = float(series[-1] / series[0]) if series[0] > 0 else 0.0
    return times, series, exponent, ratio


# ---------------------------------------------------------------------------
# rescaling and blow-up profiles


class RescaledHistory:
    """View of a history under g_j(t) = lam g(T + t/lam).

    Presents the same interface as a FlowHistory on rescaled time
    t in [-lam (T - t_first), 0); lengths scale by sqrt(lam), curvatures by
    1/lam, and the singular time moves to 0.
    """

    def __init__(self, parent: FlowHistory, lam: float, base: float):
        if parent.T_hat is None:
            raise ValueError("rescaling needs a singular time estimate")
        self.parent = parent
        self.lam = float(lam)
        self.base = base
        self.n = parent.n
        self.topology = parent.topology
        self.T_hat = 0.0
        self.status = parent.status
        self.exact = None

    def _t_orig(self, t: float) -> float:
        return self.parent.T_hat + t / self.lam

    @property
    def times(self) -> np.ndarray:
        return self.lam * (self.parent.times - self.parent.T_hat)

    @property
    def last_time(self) -> float:
        return self.lam * (self.parent.last_time - self.parent.T_hat)

    @property
    def singular(self) -> bool:
        return True

    @property
    def snapshots(self):
        root = math.sqrt(self.lam)
        out = []
        for snap in self.parent.snapshots:
            out.append(
                type(snap)(
                    t=self.lam * (snap.t - self.parent.T_hat),
                    s=snap.s * root,
                    psi=snap.psi * root,
                    xi=snap.xi,
                )
            )
        return out

    def eps_guard(self) -> float:
        return self.lam * self.parent.eps_guard()

    def material_domain(self):
        return self.parent.material_domain()

    def metric_at(self, t: float) -> WarpedMetric:
        g = self.parent.metric_at(self._t_orig(t))
        return g.scaled(self.lam, time=t)

    def position(self, xi, t: float):
        return math.sqrt(self.lam) * self.parent.position(xi, self._t_orig(t))

    def psi_at(self, xi, t: float):
        return math.sqrt(self.lam) * self.parent.psi_at(xi, self._t_orig(t))

    def scalar_at(self, xi, t: float):
        return self.parent.scalar_at(xi, self._t_orig(t)) / self.lam

    def riem_at(self, xi, t: float):
        return self.parent.riem_at(xi, self._t_orig(t)) / self.lam

    def curvature(self, index: int):
        snap = self.snapshots[index]
        return curvature_from_profile(self.n, self.topology, snap.s, snap.psi)

    def sup_riem_series(self):
        ts, ks = self.parent.sup_riem_series()
        return self.lam * (ts - self.parent.T_hat), ks / self.lam

    def type_one_bound_ok(self, C: float, tol: float = 1e-9) -> bool:
        """|Rm_j(t)| <= C / (-t) at all recorded rescaled times."""
        ts, ks = self.sup_riem_series()
        keep = ts < 0
        return bool(np.all(ks[keep] * (-ts[keep]) <= C * (1.0 + tol)))


def parabolic_rescale(history: FlowHistory, lam: float, base: float) -> RescaledHistory:
    """Zoom the history by lam around (base, T)."""
    return RescaledHistory(history, lam, base)


def _sphere_model(n: int, sigma: np.ndarray, center: float) -> np.ndarray:
    r1 = math.sqrt(2.0 * (n - 1))
    return r1 * np.abs(np.sin(np.clip((sigma - center) / r1, -math.pi, math.pi)))


def blowup_profile(
    history: FlowHistory,
    point: float,
    lambdas: np.ndarray | None = None,
    window: float = 4.0,
    flat_threshold: float = 1e-2,
) -> ProfileComparison:
    """Rescaled profile around a point at t = -1 against the model shrinkers.

    For each zoom factor the profile psi_j(sigma) = sqrt(lam) psi at
    arclength offsets sigma / sqrt(lam) is compared in sup norm against the
    shrinking sphere and cylinder at unit backward time; a point whose
    rescaled curvature vanishes is classified as flat (trivial limit).
    """
    if history.T_hat is None:
        raise ValueError("blow-up profiles need a singular time estimate")
    T = history.T_hat
    if lambdas is None:
        taus = T - history.times
        taus = taus[taus > 0]
        tau_hi = float(np.min(taus)) * 8.0
        lambdas = 1.0 / (tau_hi * np.array([1.0, 0.5, 0.25, 0.125]))
    lambdas = np.asarray(sorted(lambdas), dtype=float)

    lam = float(lambdas[-1])
    t_orig = T - 1.0 / lam
    root = math.sqrt(lam)

    base_riem = float(history.riem_at(np.array([point]), t_orig)[0]) / lam
    base_scalar = float(history.scalar_at(np.array([point]), t_orig)[0]) / lam

    metric = history.metric_at(t_orig)
    s_p = float(history.position(np.array([point]), t_orig)[0])
    sigma = np.linspace(-window, window, 161)
    s_want = s_p + sigma / root
    flagged = False
    s_min, s_max = float(metric.grid[0]), float(metric.grid[-1])
    if s_want[0] < s_min or s_want[-1] > s_max:
        flagged = True
        lo = max((s_min - s_p) * root, -window)
        hi = min((s_max - s_p) * root, window)
        sigma = np.linspace(lo, hi, 161)
        s_want = s_p + sigma / root
    psi_resc = root * metric.psi_of_s(s_want)

    n = history.n
    cyl_val = math.sqrt(2.0 * (n - 2))
    dist_cyl = float(np.max(np.abs(psi_resc - cyl_val)))
    best_center = 0.0
    best_sphere = math.inf
    r1 = math.sqrt(2.0 * (n - 1))
    for center in np.linspace(-0.5 * math.pi * r1, 0.5 * math.pi * r1, 81):
        d = float(np.max(np.abs(psi_resc - _sphere_model(n, sigma, center))))
        if d < best_sphere:
            best_sphere = d
            best_center = center
    distances = {"Cylinder": dist_cyl, "Sphere": best_sphere}

    if base_riem < flat_threshold:
        family = "Flat"
    else:
        family = "Cylinder" if dist_cyl <= best_sphere else "Sphere"
    model = (
        np.full_like(sigma, cyl_val)
        if family == "Cylinder"
        else (_sphere_model(n, sigma, best_center) if family == "Sphere" else psi_resc * 0.0)
    )
    return ProfileComparison(
        family=family,
        nontrivial=family != "Flat",
        base_riem_rescaled=base_riem,
        base_scalar_rescaled=base_scalar,
        distances=distances,
        window=float(sigma[-1] - sigma[0]) / 2.0,
        window_flagged=flagged,
        lambdas=lambdas,
        profile_s=sigma,
        profile_psi=psi_resc,
        model_psi=model,
    )
