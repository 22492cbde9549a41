"""Reduced distance and reduced volume machinery.

The reduced distance from a basepoint (p, t0) is

    l(q, tbar) = inf over curves of  L(gamma) / (2 sqrt(t0 - tbar)),
    L(gamma)   = integral of sqrt(t0 - t) (|gamma'|^2 + R) over [tbar, t0],

where curves run in the orbit space and are pinned to p at t0 and q at tbar.
Substituting z = sqrt(t0 - t) turns the weight into a regular integrand,

    L = integral_0^{zbar} ( |dgamma/dz|^2 / 2 + 2 z^2 R ) dz,

which is discretized with uniform z-nodes and midpoint quadrature and
minimized over the interior node positions with a damped Newton method
(tridiagonal Hessian) from several starts.  The discrete value is an upper
bound for the infimum up to quadrature error.

Basepoints at the singular time use curves ending a small guard gap before
the estimated singular time, evaluated at two guard sizes and extrapolated
in sqrt(guard); this mirrors the construction of the singular-time reduced
distance as a limit of regular-time ones.

The reduced volume Vtilde(tbar) integrates (4 pi tau)^{-n/2} e^{-l} over the
slice, with the fiber handled per topology: round fibers contribute the
usual volume factor, the flat product reduces to a one-dimensional Gaussian
after integrating the transverse directions analytically, and the infinite
cylinder gets analytic Gaussian tails fitted to the quadratic growth of l.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline, PchipInterpolator
from scipy.linalg import solve_banded
from scipy.special import erfc

from .geometry import Topology, fiber_volume_factor, first_derivative, second_derivative

__all__ = [
    "MinimizingCurve",
    "ReducedField",
    "ReducedVolumeSample",
    "ReducedVolumeSeries",
    "MonotonicityReport",
    "AdjointHeatReport",
    "EnvelopeFit",
    "DensityEstimate",
    "SolverInconsistencyError",
    "reduced_distance",
    "reduced_distance_field",
    "reduced_volume",
    "reduced_volume_series",
    "monotonicity_check",
    "adjoint_heat_residual",
    "envelope_fit",
    "density_estimate",
]


class SolverInconsistencyError(RuntimeError):
    """Raised when a computed quantity violates a monotonicity guarantee."""


@dataclass
class MinimizingCurve:
    """Discrete minimizer of the weighted space-time action."""

    basepoint: float
    base_time: float
    endpoint: float
    end_time: float
    nodes_xi: np.ndarray
    nodes_t: np.ndarray
    action_value: float
    reduced_distance: float
    converged: bool
    grad_norm: float
    guard: float = 0.0
    raw_values: tuple[float, ...] = ()


@dataclass
class ReducedField:
    """Reduced distance samples l(q, tbar) over a material grid."""

    basepoint: float
    base_time: float
    tbars: np.ndarray
    q_points: np.ndarray
    values: np.ndarray          # shape (len(tbars), len(q_points))
    converged: np.ndarray       # same shape, bool
    guard: float


@dataclass
class ReducedVolumeSample:
    tbar: float
    value: float
    tail_fraction: float
    density_q: np.ndarray
    density_v: np.ndarray
    all_converged: bool


@dataclass
class ReducedVolumeSeries:
    basepoint: float
    base_time: float
    samples: list[ReducedVolumeSample]

    @property
    def tbars(self) -> np.ndarray:
        return np.array([s.tbar for s in self.samples])

    @property
    def values(self) -> np.ndarray:
        return np.array([s.value for s in self.samples])


@dataclass
class MonotonicityReport:
    nondecreasing: bool
    below_one: bool
    constant: bool
    max_decrease: float
    max_value: float
    spread: float
    soliton_residual: float | None = None

    @property
    def passed(self) -> bool:
        return self.nondecreasing and self.below_one


@dataclass
class AdjointHeatReport:
    """Samples of the adjoint heat operator acting on the density v."""

    max_value: float            # signed max of box* v (theory: <= 0)
    max_abs: float
    points_s: np.ndarray
    values: np.ndarray
    dt_step: float
    ds_step: float


@dataclass
class EnvelopeFit:
    """Smallest constant satisfying the quadratic envelope bounds."""

    K_fit: float
    K_lower: float
    K_upper: float
    K_gradient: float
    K_time: float
    samples: int


@dataclass
class DensityEstimate:
    theta: float
    lower_bound: float
    verdict: str                # "Regular" | "Singular" | "Inconclusive"
    eta_threshold: float
    margin: float
    fit_residual: float
    series: ReducedVolumeSeries


# ---------------------------------------------------------------------------
# slice tables


class _SliceTable:
    """Arclength and scalar-curvature tables on a common material grid.

    One table serves every curve of a field row: rows are the segment
    midtimes of the z-grid, columns the master material nodes, so segment
    evaluations vectorize across the whole curve.
    """

    def __init__(self, history, times: np.ndarray):
        self.times = times
        if history.exact is not None:
            g0 = history.exact.metric_at(min(times[0], history.last_time))
            self.xi = g0.material()
        else:
            self.xi = history.snapshots[-1].xi
        m = len(self.xi)
        self.s = np.empty((len(times), m))
        self.R = np.empty((len(times), m))
        for k, t in enumerate(times):
            self.s[k] = history.position(self.xi, t)
            self.R[k] = history.scalar_at(self.xi, t)

    def interp_rows(self, table: np.ndarray, x: np.ndarray) -> np.ndarray:
        """Rowwise linear interpolation of ``table`` at positions x (per row)."""
        xi = self.xi
        idx = np.searchsorted(xi, x)
        idx = np.clip(idx, 1, len(xi) - 1)
        x0 = xi[idx - 1]
        x1 = xi[idx]
        w = (x - x0) / (x1 - x0)
        rows = np.arange(table.shape[0])
        return table[rows, idx - 1] * (1.0 - w) + table[rows, idx] * w


class _CurveProblem:
    """Discrete action for one (basepoint time, end time, guard) setting."""

    def __init__(self, history, t0: float, tbar: float, n_nodes: int, guard: float):
        self.t0 = t0
        self.tbar = tbar
        self.guard = guard
        z_lo = math.sqrt(max(guard, 0.0))
        z_hi = math.sqrt(t0 - tbar)
        if z_hi <= z_lo:
            raise ValueError("end time too close to the basepoint time for this guard")
        self.z = np.linspace(z_lo, z_hi, n_nodes + 1)
        self.dz = self.z[1] - self.z[0]
        z_mid = 0.5 * (self.z[1:] + self.z[:-1])
        self.t_mid = t0 - z_mid**2
        self.weight = 2.0 * z_mid**2
        self.table = _SliceTable(history, self.t_mid)
        lo = float(self.table.xi[0])
        hi = float(self.table.xi[-1])
        pad = 1e-9 * (hi - lo)
        self.lo = lo + pad
        self.hi = hi - pad

    def segment_energies(self, xi_l: np.ndarray, xi_r: np.ndarray) -> np.ndarray:
        s_l = self.table.interp_rows(self.table.s, xi_l)
        s_r = self.table.interp_rows(self.table.s, xi_r)
        r_m = self.table.interp_rows(self.table.R, 0.5 * (xi_l + xi_r))
        speed = (s_r - s_l) / self.dz
        return self.dz * (0.5 * speed**2 + self.weight * r_m)

    def action(self, path: np.ndarray) -> float:
        return float(np.sum(self.segment_energies(path[:-1], path[1:])))

    def value_grad_hess(self, path: np.ndarray, delta: float):
        """Action with tridiagonal derivative data over the interior nodes."""
        xi_l = path[:-1]
        xi_r = path[1:]
        e0 = self.segment_energies(xi_l, xi_r)
        elp = self.segment_energies(xi_l + delta, xi_r)
        elm = self.segment_energies(xi_l - delta, xi_r)
        erp = self.segment_energies(xi_l, xi_r + delta)
        erm = self.segment_energies(xi_l, xi_r - delta)
        epp = self.segment_energies(xi_l + delta, xi_r + delta)

        dl = (elp - elm) / (2.0 * delta)
        dr = (erp - erm) / (2.0 * delta)
        dll = (elp - 2.0 * e0 + elm) / delta**2
        drr = (erp - 2.0 * e0 + erm) / delta**2
        dlr = (epp - elp - erp + e0) / delta**2

        grad = dr[:-1] + dl[1:]
        h_diag = drr[:-1] + dll[1:]
        h_off = dlr[1:-1]
        return float(np.sum(e0)), grad, h_diag, h_off

    def minimize(self, start: np.ndarray, max_iter: int = 60) -> tuple[np.ndarray, float, bool, float]:
        """Damped Newton descent over the interior nodes of ``start``."""
        path = np.clip(start.copy(), self.lo, self.hi)
        width = self.hi - self.lo
        delta = 1e-7 * width
        value = self.action(path)
        lam = 1e-7
        gnorm = float("inf")
        for _ in range(max_iter):
            value, grad, h_diag, h_off = self.value_grad_hess(path, delta)
            gnorm = float(np.max(np.abs(grad)))
            gscale = (1.0 + abs(value)) / max(width, 1e-300)
            if gnorm <= 1e-9 * gscale:
                return path, value, True, gnorm
            moved = False
            for _ in range(10):
                m = len(grad)
                ab = np.zeros((3, m))
                ab[1] = h_diag + lam * (np.abs(h_diag) + 1.0)
                ab[0, 1:] = h_off
                ab[2, :-1] = h_off
                try:
                    step = solve_banded((1, 1), ab, -grad)
                except Exception:
                    lam *= 10.0
                    continue
                trial = path.copy()
                trial[1:-1] = np.clip(path[1:-1] + step, self.lo, self.hi)
                trial_value = self.action(trial)
                if trial_value <= value + 1e-14 * (1.0 + abs(value)):
                    if np.max(np.abs(trial - path)) <= 1e-12 * width:
                        return trial, trial_value, True, gnorm
                    path = trial
                    value = trial_value
                    lam = max(lam / 3.0, 1e-12)
                    moved = True
                    break
                lam *= 10.0
            if not moved:
                return path, value, gnorm <= 1e-6 * (1.0 + abs(value)) / width, gnorm
        return path, value, gnorm <= 1e-6 * (1.0 + abs(value)) / max(self.hi - self.lo, 1e-300), gnorm


def _starts(problem: _CurveProblem, p: float, q: float, count: int, rng: np.random.Generator):
    n = len(problem.z)
    base = np.linspace(p, q, n)
    yield base
    frac = (problem.z - problem.z[0]) / (problem.z[-1] - problem.z[0])
    bump = np.sin(math.pi * frac)
    amp = 0.15 * (abs(q - p) + 0.05 * (problem.hi - problem.lo))
    for _ in range(count - 1):
        yield base + amp * float(rng.uniform(-1.0, 1.0)) * bump


def _base_time(history, t0: float | None) -> tuple[float, bool]:
    """Resolve the basepoint time; True when it is the singular time."""
    if t0 is None:
        if history.T_hat is None:
            raise ValueError("history has no singular time estimate; pass t0 explicitly")
        return float(history.T_hat), True
    if history.T_hat is not None and t0 >= history.last_time:
        return float(t0), True
    return float(t0), False


def _solve_curve(history, p, t0, q, tbar, n_nodes, guard, starts, rng, warm=None):
    problem = _CurveProblem(history, t0, tbar, n_nodes, guard)
    best = None
    candidates = []
    if warm is not None:
        w = np.clip(warm.copy(), problem.lo, problem.hi)
        w[0] = p
        w[-1] = q
        candidates.append(w)
    if starts > 0 or not candidates:
        candidates.extend(_starts(problem, p, q, max(starts, 1), rng))
    for start in candidates:
        start = start.copy()
        start[0] = np.clip(p, problem.lo, problem.hi)
        start[-1] = np.clip(q, problem.lo, problem.hi)
        path, value, ok, gnorm = problem.minimize(start)
        if best is None or (ok and not best[2]) or (ok == best[2] and value < best[1]):
            best = (path, value, ok, gnorm)
    path, value, ok, gnorm = best
    tau = t0 - tbar
    return path, value, value / (2.0 * math.sqrt(tau)), ok, gnorm, problem


def reduced_distance(
    history,
    p: float,
    q: float,
    tbar: float,
    t0: float | None = None,
    n_nodes: int = 64,
    starts: int = 3,
    seed: int = 0,
    guard: float | None = None,
) -> MinimizingCurve:
    """Reduced distance from (p, t0) to (q, tbar) by direct minimization.

    t0 defaults to the singular time estimate; singular basepoints are
    handled with the guarded construction and square-root extrapolation of
    the guard.  The returned value is an upper bound for the infimum up to
    quadrature error; non-convergence is flagged, not raised.
    """
    t0, singular = _base_time(history, t0)
    rng = np.random.default_rng(seed)
    if not singular:
        path, value, l_val, ok, gnorm, problem = _solve_curve(
            history, p, t0, q, tbar, n_nodes, 0.0, starts, rng
        )
        return MinimizingCurve(
            basepoint=p,
            base_time=t0,
            endpoint=q,
            end_time=tbar,
            nodes_xi=path,
            nodes_t=t0 - problem.z**2,
            action_value=value,
            reduced_distance=l_val,
            converged=ok,
            grad_norm=gnorm,
        )

    eps = guard if guard is not None else history.eps_guard()
    eps = max(eps, 1e-14 * (t0 - tbar))
    out = []
    for factor in (1.0, 2.0):
        path, value, l_val, ok, gnorm, problem = _solve_curve(
            history, p, t0, q, tbar, n_nodes, factor * eps, starts, rng
        )
        out.append((path, value, l_val, ok, gnorm, problem))
    l1 = out[0][2]
    l2 = out[1][2]
    root2 = math.sqrt(2.0)
    l_extrap = (root2 * l1 - l2) / (root2 - 1.0)
    path, value, _, ok, gnorm, problem = out[0]
    return MinimizingCurve(
        basepoint=p,
        base_time=t0,
        endpoint=q,
        end_time=tbar,
        nodes_xi=path,
        nodes_t=t0 - problem.z**2,
        action_value=value,
        reduced_distance=l_extrap,
        converged=ok and out[1][3],
        grad_norm=gnorm,
        guard=eps,
        raw_values=(l1, l2),
    )


def reduced_distance_field(
    history,
    p: float,
    tbars: Sequence[float],
    q_points: Sequence[float],
    t0: float | None = None,
    n_nodes: int = 64,
    starts: int = 3,
    seed: int = 0,
    guard: float | None = None,
) -> ReducedField:
    """Batch reduced distances with warm starts along each time row."""
    t0, singular = _base_time(history, t0)
    rng = np.random.default_rng(seed)
    tbars = np.asarray(list(tbars), dtype=float)
    qs = np.asarray(list(q_points), dtype=float)
    values = np.empty((len(tbars), len(qs)))
    flags = np.zeros((len(tbars), len(qs)), dtype=bool)
    eps = 0.0
    if singular:
        eps = guard if guard is not None else history.eps_guard()
        eps = max(eps, 1e-14 * (t0 - float(np.max(tbars))))
    guards = (eps, 2.0 * eps) if singular else (0.0,)

    for i, tbar in enumerate(tbars):
        per_guard = []
        for g_val in guards:
            problem = _CurveProblem(history, t0, float(tbar), n_nodes, g_val)
            row = np.empty(len(qs))
            okrow = np.zeros(len(qs), dtype=bool)
            warm = None
            for j, q in enumerate(qs):
                cands = []
                if warm is not None:
                    w = warm.copy()
                    w += np.linspace(0.0, float(q) - w[-1], len(w))
                    cands.append(np.clip(w, problem.lo, problem.hi))
                n_starts = starts if (warm is None or j % 8 == 0) else 1
                cands.extend(_starts(problem, p, float(q), n_starts, rng))
                best = None
                for start in cands:
                    start = start.copy()
                    start[0] = np.clip(p, problem.lo, problem.hi)
                    start[-1] = np.clip(q, problem.lo, problem.hi)
                    path, value, ok, gnorm = problem.minimize(start)
                    if best is None or (ok and not best[2]) or (ok == best[2] and value < best[1]):
                        best = (path, value, ok, gnorm)
                warm = best[0]
                row[j] = best[1] / (2.0 * math.sqrt(t0 - tbar))
                okrow[j] = best[2]
            per_guard.append((row, okrow))
        if singular:
            root2 = math.sqrt(2.0)
            values[i] = (root2 * per_guard[0][0] - per_guard[1][0]) / (root2 - 1.0)
            flags[i] = per_guard[0][1] & per_guard[1][1]
        else:
            values[i] = per_guard[0][0]
            flags[i] = per_guard[0][1]
    return ReducedField(
        basepoint=p,
        base_time=t0,
        tbars=tbars,
        q_points=qs,
        values=values,
        converged=flags,
        guard=eps,
    )


# ---------------------------------------------------------------------------
# reduced volume


def _volume_q_points(history, p: float, tbar: float, t0: float) -> np.ndarray:
    """Sample points for the density: a cluster around the basepoint at the
    diffusion scale plus global coverage of the slice."""
    tau = t0 - tbar
    root = math.sqrt(tau)
    lo, hi = history.material_domain()
    xi_m, s_m, _ = _slice_of(history, tbar)
    s_p = float(np.interp(p, xi_m, s_m))

    offsets = np.concatenate((np.arange(0.0, 4.5, 0.3), np.array([4.8, 5.4, 6.2, 7.0, 8.0, 10.0])))
    targets = np.concatenate((s_p - root * offsets[::-1], s_p + root * offsets[1:]))
    cluster = np.interp(np.clip(targets, s_m[0], s_m[-1]), s_m, xi_m)
    coarse = np.linspace(lo, hi, 33)
    qs = np.unique(np.concatenate((cluster, coarse)))
    return qs


def _slice_of(history, t: float):
    if history.exact is not None:
        g = history.exact.metric_at(t)
        return g.material(), g.grid, np.full(len(g.grid), history.exact.scalar_value(t))
    xi = history.snapshots[-1].xi
    return xi, history.position(xi, t), history.scalar_at(xi, t)


def _tail_integral(s_edge, direction, coeffs, amplitude, tau):
    """Analytic Gaussian tail beyond s_edge for l(s) = a (s-b)^2 + c."""
    a, b, c = coeffs
    if a <= 0.0:
        return 0.0
    root_a = math.sqrt(a)
    if direction > 0:
        arg = root_a * (s_edge - b)
    else:
        arg = root_a * (b - s_edge)
    return amplitude * math.exp(-c) * 0.5 * math.sqrt(math.pi / a) * erfc(arg)


def reduced_volume(
    history,
    p: float,
    tbar: float,
    t0: float | None = None,
    n_nodes: int = 64,
    starts: int = 3,
    seed: int = 0,
    guard: float | None = None,
    q_points: Sequence[float] | None = None,
) -> ReducedVolumeSample:
    """Reduced volume at tbar for the basepoint (p, t0) by slice quadrature."""
    t0_res, _ = _base_time(history, t0)
    tau = t0_res - tbar
    qs = np.asarray(q_points, dtype=float) if q_points is not None else _volume_q_points(history, p, tbar, t0_res)
    fld = reduced_distance_field(
        history, p, [tbar], qs, t0=t0, n_nodes=n_nodes, starts=starts, seed=seed, guard=guard
    )
    l_q = fld.values[0]
    ok = bool(np.all(fld.converged[0]))

    metric = history.metric_at(tbar)
    n = history.n
    topology = history.topology
    xi_m, s_m, _ = _slice_of(history, tbar)
    s_q = np.interp(qs, xi_m, s_m)
    order = np.argsort(s_q)
    s_q = s_q[order]
    l_sorted = l_q[order]
    s_q, keep = np.unique(s_q, return_index=True)
    l_sorted = l_sorted[keep]
    l_of_s = CubicSpline(s_q, l_sorted, bc_type="natural")

    # uniform quadrature grid at the finer of the diffusion scale and the
    # slice resolution; spacing jumps would spoil the trapezoid cancellation
    root = math.sqrt(tau)
    h_metric = float(np.min(np.diff(metric.grid)))
    h_quad = max(min(root / 8.0, 2.0 * h_metric), (s_q[-1] - s_q[0]) / 60000.0)
    count = int(math.ceil((s_q[-1] - s_q[0]) / h_quad)) + 1
    s_dense = np.linspace(s_q[0], s_q[-1], max(count, 64))
    psi_dense = PchipInterpolator(metric.grid, metric.psi)(s_dense)
    l_dense = l_of_s(s_dense)

    norm = (4.0 * math.pi * tau) ** (-0.5 * n)
    if topology is Topology.FLAT:
        # transverse directions integrate to (4 pi tau)^{(n-1)/2} exactly on
        # the static flat product, leaving a one-dimensional Gaussian
        integrand = (4.0 * math.pi * tau) ** (-0.5) * np.exp(-l_dense)
        amplitude = (4.0 * math.pi * tau) ** (-0.5)
    else:
        w_fiber = fiber_volume_factor(n, topology)
        integrand = w_fiber * psi_dense ** (n - 1) * norm * np.exp(-l_dense)
        amplitude = None

    value = float(np.trapezoid(integrand, s_dense))
    tail = 0.0
    if topology in (Topology.FLAT, Topology.CYLINDER_INFINITE):
        for direction in (-1, +1):
            if direction < 0:
                sel = s_q <= s_q[0] + 0.35 * (s_q[-1] - s_q[0])
                edge = s_q[0]
                psi_edge = float(metric.psi_of_s(edge))
            else:
                sel = s_q >= s_q[-1] - 0.35 * (s_q[-1] - s_q[0])
                edge = s_q[-1]
                psi_edge = float(metric.psi_of_s(edge))
            if np.count_nonzero(sel) < 3:
                continue
            poly = np.polyfit(s_q[sel], l_sorted[sel], 2)
            a = poly[0]
            if a <= 0.0:
                continue
            b = -poly[1] / (2.0 * a)
            c = poly[2] - a * b**2
            if topology is Topology.FLAT:
                amp = amplitude
            else:
                amp = fiber_volume_factor(n, topology) * psi_edge ** (n - 1) * norm
            tail += _tail_integral(edge, direction, (a, b, c), amp, tau)
    value_total = value + tail
    v_q = norm * np.exp(-l_q)
    return ReducedVolumeSample(
        tbar=float(tbar),
        value=value_total,
        tail_fraction=tail / value_total if value_total > 0 else 0.0,
        density_q=qs,
        density_v=v_q,
        all_converged=ok,
    )


def reduced_volume_series(
    history,
    p: float,
    tbars: Sequence[float],
    t0: float | None = None,
    n_nodes: int = 64,
    starts: int = 3,
    seed: int = 0,
    guard: float | None = None,
) -> ReducedVolumeSeries:
    t0_res, _ = _base_time(history, t0)
    samples = [
        reduced_volume(history, p, float(tb), t0=t0, n_nodes=n_nodes, starts=starts, seed=seed, guard=guard)
        for tb in tbars
    ]
    return ReducedVolumeSeries(basepoint=p, base_time=t0_res, samples=samples)


def monotonicity_check(
    series: ReducedVolumeSeries,
    slack: float = 1e-4,
    upper_tol: float = 1e-3,
    const_tol: float = 1e-3,
    soliton_check: Callable[[], float] | None = None,
) -> MonotonicityReport:
    """Verify the monotonicity and normalization of a reduced volume series.

    The series must be nondecreasing toward the basepoint time within the
    slack and bounded by 1 + upper_tol.  When the samples are constant within
    const_tol the optional callback supplies the self-similarity residual of
    the underlying flow, which dovetails with the equality case.
    """
    vals = series.values
    order = np.argsort(series.tbars)
    vals = vals[order]
    diffs = np.diff(vals)
    max_dec = float(max(0.0, -np.min(diffs))) if len(diffs) else 0.0
    spread = float(np.max(vals) - np.min(vals)) if len(vals) else 0.0
    constant = spread <= const_tol
    residual = None
    if constant and soliton_check is not None:
        residual = float(soliton_check())
    return MonotonicityReport(
        nondecreasing=bool(max_dec <= slack),
        below_one=bool(np.max(vals) <= 1.0 + upper_tol),
        constant=constant,
        max_decrease=max_dec,
        max_value=float(np.max(vals)),
        spread=spread,
        soliton_residual=residual,
    )


# ---------------------------------------------------------------------------
# adjoint heat operator


def adjoint_heat_residual(
    history,
    p: float,
    tbar: float,
    region: tuple[float, float],
    t0: float | None = None,
    n_points: int = 9,
    dt_frac: float = 0.03,
    ds_frac: float = 0.25,
    n_nodes: int = 64,
    seed: int = 0,
) -> AdjointHeatReport:
    """Finite-difference samples of box* v = -dv/dt - Lap v + R v.

    v is the reduced volume density for the basepoint (p, t0).  The spatial
    part uses the warped Laplacian of a fiber-constant function plus, on the
    flat product, the analytic transverse contribution of the separable
    Gaussian factor.  Sample points are material points in ``region`` on the
    tbar slice; time derivatives are taken at fixed material point.
    """
    t0_res, _ = _base_time(history, t0)
    tau = t0_res - tbar
    dt = dt_frac * tau
    n = history.n
    topology = history.topology

    xi_lo, xi_hi = region
    xi_m, s_m, _ = _slice_of(history, tbar)
    s_lo = float(np.interp(xi_lo, xi_m, s_m))
    s_hi = float(np.interp(xi_hi, xi_m, s_m))
    ds = ds_frac * math.sqrt(tau)
    span = s_hi - s_lo
    count = max(n_points + 2, int(math.floor(span / ds)) + 1)
    s_stencil = np.linspace(s_lo, s_hi, count)
    ds = float(s_stencil[1] - s_stencil[0])
    qs = np.interp(s_stencil, s_m, xi_m)

    times = (tbar - dt, tbar, tbar + dt)
    fld = reduced_distance_field(history, p, times, qs, t0=t0, n_nodes=n_nodes, seed=seed)
    norm = lambda tt: (4.0 * math.pi * (t0_res - tt)) ** (-0.5 * n)
    v = np.stack([norm(tt) * np.exp(-fld.values[k]) for k, tt in enumerate(times)])

    # spatial geometry on the center slice
    s_now = history.position(qs, tbar)
    metric = history.metric_at(tbar)
    psi = metric.psi_of_s(s_now)
    psi_s = np.interp(
        s_now,
        metric.grid,
        first_derivative(metric.grid, metric.psi),
    )
    R_now = history.scalar_at(qs, tbar)

    v_mid = v[1]
    v_s = first_derivative(s_now, v_mid)
    v_ss = second_derivative(s_now, v_mid)
    if topology is Topology.FLAT:
        fiber = -(n - 1) / (2.0 * tau) * v_mid
    else:
        fiber = (n - 1) * (psi_s / psi) * v_s
        fiber = np.where(psi > 1e-12, fiber, 0.0)
    lap = v_ss + fiber
    dv_dt = (v[2] - v[0]) / (2.0 * dt)
    box_star = -dv_dt - lap + R_now * v_mid

    # report interior stencil points only
    keep = slice(1, -1)
    vals = box_star[keep]
    return AdjointHeatReport(
        max_value=float(np.max(vals)),
        max_abs=float(np.max(np.abs(vals))),
        points_s=s_now[keep],
        values=vals,
        dt_step=dt,
        ds_step=float(np.mean(np.diff(s_stencil))),
    )


# ---------------------------------------------------------------------------
# envelope constants


def envelope_fit(
    history,
    p: float,
    tbars: Sequence[float],
    q_points: Sequence[float] | None = None,
    t0: float | None = None,
    n_nodes: int = 64,
    seed: int = 0,
) -> EnvelopeFit:
    """Smallest K making the two-sided quadratic, gradient and time bounds hold.

    The bounds compare l with (1 + d/sqrt(tau))^2, its spatial gradient with
    K/sqrt(tau) (1 + d/sqrt(tau)) and its time derivative with K/tau times
    the quadratic, over all samples of the field.
    """
    t0_res, _ = _base_time(history, t0)
    tbars = np.asarray(sorted(tbars), dtype=float)
    if q_points is None:
        lo, hi = history.material_domain()
        q_points = np.linspace(lo, hi, 41)
    qs = np.asarray(q_points, dtype=float)
    fld = reduced_distance_field(history, p, tbars, qs, t0=t0, n_nodes=n_nodes, seed=seed)

    K_lower = 0.0
    K_upper = 0.0
    K_grad = 0.0
    K_time = 0.0
    count = 0
    l_all = fld.values
    for i, tb in enumerate(tbars):
        tau = t0_res - tb
        s_now = history.position(qs, tb)
        s_p = float(history.position(np.array([p]), tb)[0])
        d = np.abs(s_now - s_p)
        if history.topology.periodic:
            period = float(s_now[-1] - s_now[0])
            d = np.minimum(d, period - d)
        wq = 1.0 + d / math.sqrt(tau)
        l_here = l_all[i]
        K_upper = max(K_upper, float(np.max(l_here / wq**2)))
        K_lower = max(K_lower, float(np.max(0.5 * (-l_here + np.sqrt(l_here**2 + 4.0 * wq**2)))))
        grad = np.abs(first_derivative(s_now, l_here))
        K_grad = max(K_grad, float(np.max(grad * math.sqrt(tau) / wq)))
        if 0 < i < len(tbars) - 1:
            dt_m = tbars[i] - tbars[i - 1]
            dt_p = tbars[i + 1] - tbars[i]
            dl_dt = (l_all[i + 1] - l_all[i - 1]) / (dt_m + dt_p)
            K_time = max(K_time, float(np.max(np.abs(dl_dt) * tau / wq**2)))
        count += len(qs)
    K_fit = max(K_lower, K_upper, K_grad, K_time)
    return EnvelopeFit(
        K_fit=K_fit,
        K_lower=K_lower,
        K_upper=K_upper,
        K_gradient=K_grad,
        K_time=K_time,
        samples=count,
    )


# ---------------------------------------------------------------------------
# density


def density_estimate(
    history,
    p: float,
    eta_threshold: float = 0.02,
    k_count: int = 7,
    delta0: float | None = None,
    n_nodes: int = 64,
    starts: int = 3,
    seed: int = 0,
    monotonicity_slack: float = 1e-3,
) -> DensityEstimate:
    """Density at the singular time over the basepoint p.

    Samples the reduced volume at tbar_k = T - delta0 2^{-k}, extrapolates
    the monotone sequence affinely in T - tbar from the last three samples,
    and classifies against the configured gap threshold.  The last computed
    sample is always a valid lower bound for the density.
    """
    if history.T_hat is None:
        raise ValueError("density needs a singular time estimate")
    T = float(history.T_hat)
    t_first = float(history.times[0])
    if delta0 is None:
        delta0 = 0.5 * (T - t_first)
    guard = history.eps_guard()
    tau_floor = max(25.0 * guard, 2.0 * (T - history.last_time))
    taus = np.array([delta0 * 2.0 ** (-k) for k in range(k_count)])
    taus = taus[taus >= tau_floor]
    if len(taus) < 3:
        raise ValueError("not enough usable density samples above the guard scale")
    tbars = T - taus

    series = reduced_volume_series(
        history, p, tbars, t0=None, n_nodes=n_nodes, starts=starts, seed=seed
    )
    vals = series.values
    order = np.argsort(series.tbars)
    v_sorted = vals[order]
    diffs = np.diff(v_sorted)
    max_dec = float(max(0.0, -np.min(diffs))) if len(diffs) else 0.0
    if max_dec > monotonicity_slack:
        raise SolverInconsistencyError(
            f"reduced volume series decreases by {max_dec:.3e} toward the basepoint time"
        )

    tau_sorted = (T - series.tbars)[order]
    fit_t = tau_sorted[-3:]
    fit_v = v_sorted[-3:]
    coef = np.polyfit(fit_t, fit_v, 1)
    theta = float(np.polyval(coef, 0.0))
    resid = float(np.sqrt(np.mean((np.polyval(coef, fit_t) - fit_v) ** 2)))
    lower = float(v_sorted[-1])
    theta = max(theta, lower)

    margin = 2.0 * (resid + abs(float(np.diff(v_sorted[-2:])[0]))) if len(v_sorted) >= 2 else resid
    gap = 1.0 - eta_threshold
    if theta > gap:
        verdict = "Regular"
    elif theta + margin < gap:
        verdict = "Singular"
    else:
        verdict = "Inconclusive"
    return DensityEstimate(
        theta=theta,
        lower_bound=lower,
        verdict=verdict,
        eta_threshold=eta_threshold,
        margin=margin,
        fit_residual=resid,
        series=series,
    )
