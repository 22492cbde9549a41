"""Scenario runner: configure, evolve, analyze, verify, emit artifacts.

A run is driven by a flat key-value config (see DEFAULTS and the README for
the key list).  The pipeline evolves or constructs the scenario's flow,
estimates the singular time and Type I constants, and executes the enabled
verification stages; every check lands in report.json with its measured
value and the tolerance it was held to, and the run is reproducible
bit-for-bit from (config, seed).

Exit codes: 0 all enabled checks passed, 1 a check failed, 2 bad
config/usage, 3 solver instability, 4 unreliable classification.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import reduced, singular
from .flow import FlowConfig, FlowHistory, SolverInstabilityError, dumbbell_profile, evolve, exact_history
from .geometry import RM_NORM_CONVENTION, Topology, WarpedMetric, ball_inclusion_check, curvature_field, write_metric
from .solutions import ExactFamily, make_exact_flow

__all__ = ["ScenarioConfig", "VerificationReport", "run_scenario", "compare_reports", "main"]

SCHEMA_VERSION = 1
ENV_PREFIX = "RICCILAB_"

ALL_CHECKS = (
    "exact_fidelity",
    "type_one",
    "reduced_oracles",
    "density",
    "monotonicity",
    "subsolution",
    "envelope",
    "classification",
    "coincidence",
    "rate_bands",
    "volume_decay",
    "blowup",
    "ball_inclusion",
)

DEFAULTS = {
    "scenario": "sphere",
    "n": 3,
    "grid_points": 801,
    "sigma": 0.1,
    "step_rtol": 3e-8,
    "stop_sup_riem": 1e6,
    "min_points": 401,
    "snapshots_per_decade": 16,
    "curve_nodes": 64,
    "density_samples": 6,
    "eta_threshold": 0.02,
    "rate_floor": 1e-2,
    "seed": 0,
    "checks": "all",
    "out_dir": "runs",
    "neck": 1.0,
    "bulb": 7.0,
    "resolution_alpha": 0.25,
    "regrid_ratio": 1.6,
    "axis_extent": 8.0,
    "circumference": 6.283185307179586,
}

SCENARIO_OVERRIDES = {
    "sphere": {"curve_nodes": 256, "min_points": 801},
    "cylinder": {"grid_points": 513},
    "gaussian": {"grid_points": 401},
    "neckpinch": {
        "stop_sup_riem": 1e7,
        "step_rtol": 1e-6,
        "curve_nodes": 96,
        "grid_points": 1201,
        "min_points": 601,
        "resolution_alpha": 0.1,
        "regrid_ratio": 1.25,
    },
}


@dataclass
class ScenarioConfig:
    """Fully serializable run configuration."""

    values: dict = field(default_factory=dict)

    @classmethod
    def for_scenario(cls, name: str, overrides: dict | None = None) -> "ScenarioConfig":
        if name not in SCENARIO_OVERRIDES:
            raise ValueError(f"unknown scenario {name!r}; known: {sorted(SCENARIO_OVERRIDES)}")
        values = dict(DEFAULTS)
        values["scenario"] = name
        values.update(SCENARIO_OVERRIDES[name])
        if overrides:
            values.update(overrides)
        return cls(values=values)

    @classmethod
    def from_file(cls, path: str | Path) -> "ScenarioConfig":
        raw: dict = {}
        for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            if "=" not in stripped:
                raise ValueError(f"{path}:{line_no}: expected 'key = value'")
            key, _, value = stripped.partition("=")
            raw[key.strip()] = value.strip()
        name = raw.pop("scenario", DEFAULTS["scenario"])
        cfg = cls.for_scenario(name)
        for key, value in raw.items():
            cfg.set(key, value)
        return cfg

    def set(self, key: str, value):
        if key not in DEFAULTS:
            raise ValueError(f"unknown config key {key!r}")
        template = DEFAULTS[key]
        if isinstance(template, bool):
            value = str(value).lower() in ("1", "true", "yes", "on")
        elif isinstance(template, int):
            value = int(float(value))
        elif isinstance(template, float):
            value = float(value)
        else:
            value = str(value)
        self.values[key] = value

    def apply_env(self, environ=None):
        env = os.environ if environ is None else environ
        for key in DEFAULTS:
            env_key = ENV_PREFIX + key.upper()
            if env_key in env:
                self.set(key, env[env_key])

    def __getitem__(self, key):
        return self.values[key]

    def enabled_checks(self) -> tuple[str, ...]:
        spec = self.values["checks"]
        if spec == "all":
            return ALL_CHECKS
        names = tuple(x.strip() for x in spec.split(",") if x.strip())
        for name in names:
            if name not in ALL_CHECKS:
                raise ValueError(f"unknown check {name!r}; known: {ALL_CHECKS}")
        return names

    def digest(self) -> str:
        payload = json.dumps(self.values, sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]

    def to_text(self) -> str:
        lines = [f"{k} = {self.values[k]}" for k in sorted(self.values)]
        return "\n".join(lines) + "\n"


@dataclass
class VerificationReport:
    schema_version: int
    scenario: str
    config_digest: str
    checks: list[dict]
    values: dict
    provenance: dict

    @property
    def all_passed(self) -> bool:
        return all(c["status"] != "fail" for c in self.checks)

    def to_json(self) -> str:
        payload = {
            "schema_version": self.schema_version,
            "scenario": self.scenario,
            "config_digest": self.config_digest,
            "checks": self.checks,
            "values": self.values,
            "provenance": self.provenance,
        }
        return json.dumps(payload, indent=2, sort_keys=True)


def _check(checks: list, name: str, passed: bool | None, measured, tolerance, detail: str = ""):
    status = "inconclusive" if passed is None else ("pass" if passed else "fail")
    checks.append(
        {
            "name": name,
            "status": status,
            "measured": measured,
            "tolerance": tolerance,
            "detail": detail,
        }
    )


def _build_history(cfg: ScenarioConfig) -> tuple[FlowHistory, FlowHistory | None, dict]:
    """Evolve the scenario; returns (history, analysis_history, extras).

    The analysis history is the one used for the reduced-distance stages.
    For the cylinder scenario the evolution runs on a periodic axis (finite
    volume), while the density integrals use the closed-form infinite
    cylinder with analytic tails; the two agree in the fiber.
    """
    name = cfg["scenario"]
    n = int(cfg["n"])
    m = int(cfg["grid_points"])
    fc = FlowConfig(
        sigma=float(cfg["sigma"]),
        step_rtol=float(cfg["step_rtol"]),
        stop_sup_riem=float(cfg["stop_sup_riem"]),
        min_points=int(cfg["min_points"]),
        per_decade_snapshots=int(cfg["snapshots_per_decade"]),
        resolution_alpha=float(cfg["resolution_alpha"]),
        regrid_ratio=float(cfg["regrid_ratio"]),
    )
    extras: dict = {}
    if name == "sphere":
        exact = make_exact_flow(ExactFamily.SPHERE, n, 1.0, grid_points=m)
        hist = evolve(exact.metric_at(0.0), fc)
        analysis = exact_history(exact)
        extras["exact"] = exact
    elif name == "cylinder":
        circ = float(cfg["circumference"])
        x = np.linspace(0.0, circ, m)
        r0 = math.sqrt(2.0 * (n - 2))
        initial = WarpedMetric(n, Topology.CYLINDER_PERIODIC, x, np.full(m, r0), time=0.0, xi=x)
        hist = evolve(initial, fc)
        exact = make_exact_flow(
            ExactFamily.CYLINDER, n, 1.0, grid_points=m, axis_extent=float(cfg["axis_extent"])
        )
        analysis = exact_history(exact)
        extras["exact"] = exact
    elif name == "gaussian":
        exact = make_exact_flow(
            ExactFamily.GAUSSIAN, n, 1.0, grid_points=m, axis_extent=float(cfg["axis_extent"])
        )
        fc.t_final = 0.5
        hist = evolve(exact.metric_at(0.0), fc)
        analysis = exact_history(exact, t_end=1.0)
        extras["exact"] = exact
        extras["flat_t0"] = 1.0
    elif name == "neckpinch":
        initial = dumbbell_profile(n, neck=float(cfg["neck"]), bulb=float(cfg["bulb"]), grid_points=m)
        hist = evolve(initial, fc)
        analysis = hist
    else:
        raise ValueError(f"unknown scenario {name!r}")
    return hist, analysis, extras


def run_scenario(cfg: ScenarioConfig, out_dir: str | Path | None = None) -> VerificationReport:
    """Execute the configured pipeline and write artifacts under out_dir."""
    name = cfg["scenario"]
    n = int(cfg["n"])
    seed = int(cfg["seed"])
    nodes = int(cfg["curve_nodes"])
    enabled = cfg.enabled_checks()
    out = Path(out_dir) if out_dir is not None else Path(cfg["out_dir"]) / name
    out.mkdir(parents=True, exist_ok=True)

    checks: list[dict] = []
    values: dict = {}

    hist, analysis, extras = _build_history(cfg)
    values["status"] = hist.status
    values["steps"] = hist.diagnostics.get("steps")
    if hist.T_hat is not None:
        values["T_hat"] = hist.T_hat
        if hist.time_fit is not None:
            values["blowup_exponent"] = hist.time_fit.exponent
            values["fit_residual"] = hist.time_fit.residual

    # scenario geometry handles
    dom = analysis.material_domain()
    if name == "neckpinch":
        base_singular = 0.5 * (dom[0] + dom[1])
        base_regular = dom[0]
    elif name == "sphere":
        base_singular = dom[0]
        base_regular = None
    else:
        base_singular = 0.5 * (dom[0] + dom[1])
        base_regular = None
    flat_t0 = extras.get("flat_t0")

    # snapshots to the documented text format
    for i in (0, len(hist.snapshots) // 2, len(hist.snapshots) - 1):
        snap = hist.snapshots[i]
        write_metric(out / f"snapshot_{i:04d}.txt", snap.metric(hist.n, hist.topology))

    if "exact_fidelity" in enabled and name in ("sphere", "cylinder"):
        worst = 0.0
        for snap in hist.snapshots:
            tau = 1.0 - snap.t
            if tau < 1e-3:
                continue
            if name == "sphere":
                r = math.sqrt(2.0 * (n - 1) * tau)
                exact_psi = r * np.sin(snap.xi / math.sqrt(2.0 * (n - 1)))
            else:
                r = math.sqrt(2.0 * (n - 2) * tau)
                exact_psi = np.full(len(snap.xi), r)
            worst = max(worst, float(np.max(np.abs(snap.psi - exact_psi)) / r))
        values["profile_error"] = worst
        _check(checks, "exact_fidelity", worst <= 1e-4, worst, 1e-4, "sup relative profile error, T-t >= 1e-3")
        t_err = abs(hist.T_hat - 1.0) if hist.T_hat else math.inf
        values["T_hat_error"] = t_err
        _check(checks, "singular_time", t_err <= 1e-4, t_err, 1e-4, "singular time against the closed form")

    if "type_one" in enabled and hist.singular and hist.type_one is not None:
        to = hist.type_one
        values["C_fit"] = to.C_fit
        values["c_fit"] = to.c_fit
        values["min_product"] = to.min_product
        _check(checks, "type_one_lower", to.min_product >= 0.125 - 1e-3, to.min_product, 0.125 - 1e-3,
               "(T-t) sup|Rm| against the maximum-principle floor, all recorded times")
        if name == "sphere":
            target = math.sqrt(2.0 * n * (n - 1)) / (2.0 * (n - 1))
            rel = abs(to.C_fit / target - 1.0)
            _check(checks, "type_one_value", rel <= 1e-2, to.C_fit, target, "sphere (T-t) sup|Rm| within 1%")
        if name == "cylinder":
            target = math.sqrt(2.0 * (n - 1) * (n - 2)) / (2.0 * (n - 2))
            rel = abs(to.c_fit / target - 1.0)
            _check(checks, "type_one_value", rel <= 1e-2, to.c_fit, target, "cylinder (T-t) sup|Rm| within 1%")

    if "reduced_oracles" in enabled and name == "gaussian":
        rng = np.random.default_rng(seed)
        worst = 0.0
        for _ in range(10):
            d = float(rng.uniform(0.3, 3.0))
            tau = float(rng.uniform(0.2, 0.9))
            mc = reduced.reduced_distance(analysis, 0.0, d, flat_t0 - tau, t0=flat_t0, n_nodes=nodes, seed=seed)
            worst = max(worst, abs(mc.reduced_distance / (d * d / (4.0 * tau)) - 1.0))
        values["flat_l_error"] = worst
        _check(checks, "reduced_oracles", worst <= 1e-3, worst, 1e-3, "flat reduced distance against d^2/(4 tau)")
    if "reduced_oracles" in enabled and name == "sphere":
        mc = reduced.reduced_distance(analysis, base_singular, 2.0, analysis.T_hat - 0.5, n_nodes=nodes, seed=seed)
        rel = abs(mc.reduced_distance / (n / 2.0) - 1.0)
        values["sphere_l"] = mc.reduced_distance
        _check(checks, "reduced_oracles", rel <= 1e-2, mc.reduced_distance, n / 2.0, "singular-basepoint reduced distance n/2 within 1%")
    if "reduced_oracles" in enabled and name == "cylinder":
        worst = 0.0
        for x in (0.0, 1.0, 2.0):
            mc = reduced.reduced_distance(analysis, 0.0, x, analysis.T_hat - 0.5, n_nodes=nodes, seed=seed)
            expect = x * x / 2.0 + (n - 1) / 2.0
            worst = max(worst, abs(mc.reduced_distance / expect - 1.0))
        values["cylinder_l_error"] = worst
        _check(checks, "reduced_oracles", worst <= 2e-2, worst, 2e-2, "axis-potential oracle within 2%")

    series = None
    if any(k in enabled for k in ("density", "monotonicity")):
        if name == "gaussian":
            tbars = flat_t0 - np.array([0.8, 0.5, 0.3, 0.15, 0.08])
            series = reduced.reduced_volume_series(analysis, base_singular, tbars, t0=flat_t0, n_nodes=nodes, seed=seed)
            theta = float(series.values[-1])
            est = None
        else:
            est = reduced.density_estimate(
                analysis,
                base_singular,
                eta_threshold=float(cfg["eta_threshold"]),
                k_count=int(cfg["density_samples"]),
                n_nodes=nodes,
                seed=seed,
            )
            series = est.series
            theta = est.theta
        values["theta"] = theta
        if "density" in enabled:
            oracle = {
                "gaussian": (1.0, 1e-2),
                "sphere": (2.0 * math.sqrt(math.pi) * math.exp(-n / 2.0), 1e-2 * 0.791 / 0.791),
                "cylinder": (2.0 / math.e, 1e-2),
            }
            if name in oracle:
                target, tol = oracle[name]
                rel = abs(theta / target - 1.0)
                _check(checks, "density_value", rel <= 1e-2, theta, target, "density against the closed-form oracle, 1%")
            if est is not None:
                values["density_verdict"] = est.verdict
                expected = "Regular" if name == "gaussian" else "Singular"
                _check(checks, "density_verdict", est.verdict == expected, est.verdict, expected, "gap classification")
        if "monotonicity" in enabled:
            rep = reduced.monotonicity_check(series)
            values["series_spread"] = rep.spread
            values["series_max_decrease"] = rep.max_decrease
            _check(checks, "monotonicity", rep.passed, rep.max_decrease, 1e-4, "reduced volume nondecreasing, bounded by one")
            if name in ("sphere", "cylinder", "gaussian"):
                _check(checks, "series_constancy", rep.spread <= 1e-3, rep.spread, 1e-3, "constant series on the self-similar flow")
        _write_series_csv(out / "reduced_volume.csv", series)
        if name == "neckpinch" and "density" in enabled:
            # the regular-point series saturates at one, so sample it where
            # the genuine increase still dominates the sampling noise
            span = analysis.T_hat - float(analysis.times[0])
            est_reg = reduced.density_estimate(
                analysis, base_regular, eta_threshold=float(cfg["eta_threshold"]),
                k_count=4, delta0=0.9 * span, n_nodes=nodes, seed=seed,
            )
            values["theta_regular"] = est_reg.theta
            _check(checks, "density_regular", est_reg.verdict == "Regular" and abs(est_reg.theta - 1.0) <= 1e-2,
                   est_reg.theta, 1.0, "polar cap density equals one")
            increase = float(np.min(np.diff(est_reg.series.values[np.argsort(est_reg.series.tbars)])))
            _check(checks, "strict_increase", increase > 0.0, increase, 0.0, "series strictly increasing at the regular point")

    if "subsolution" in enabled:
        if name == "gaussian":
            rep = reduced.adjoint_heat_residual(analysis, base_singular, flat_t0 - 0.6, (-2.0, 2.0), t0=flat_t0, n_nodes=nodes, seed=seed)
        elif name == "sphere":
            rep = reduced.adjoint_heat_residual(analysis, base_singular, analysis.T_hat - 0.5, (0.3 * dom[1], 0.7 * dom[1]), n_nodes=nodes, seed=seed)
        elif name == "cylinder":
            rep = reduced.adjoint_heat_residual(analysis, base_singular, analysis.T_hat - 0.5, (-2.5, 2.5), n_nodes=nodes, seed=seed)
        else:
            tau = 0.5 * (analysis.T_hat - analysis.times[0])
            rep = reduced.adjoint_heat_residual(
                analysis, base_regular, analysis.T_hat - tau, (dom[0] + 1e-9, 0.25 * dom[1]), n_nodes=nodes, seed=seed
            )
        values["box_star_max"] = rep.max_value
        _check(checks, "subsolution", rep.max_value <= 1e-3, rep.max_value, 1e-3, "adjoint heat inequality on the density")

    if "envelope" in enabled:
        T0 = analysis.T_hat if analysis.T_hat is not None else flat_t0
        taus = np.array([0.6, 0.45, 0.3, 0.2])
        ef = reduced.envelope_fit(analysis, base_singular, T0 - taus, t0=None if analysis.T_hat else flat_t0, n_nodes=nodes, seed=seed)
        lo_dom, hi_dom = dom
        qs2 = np.linspace(lo_dom, hi_dom, 81)
        ef2 = reduced.envelope_fit(analysis, base_singular, T0 - taus, q_points=qs2, t0=None if analysis.T_hat else flat_t0, n_nodes=nodes, seed=seed)
        drift = abs(ef2.K_fit / ef.K_fit - 1.0)
        values["K_fit"] = ef.K_fit
        values["K_fit_drift"] = drift
        ok = math.isfinite(ef.K_fit) and drift < 0.10
        _check(checks, "envelope", ok, ef.K_fit, "finite, <10% drift", f"refinement drift {drift:.3f}")

    report_obj = None
    if any(k in enabled for k in ("classification", "coincidence", "rate_bands", "volume_decay", "blowup")):
        report_obj = singular.classify_singular_points(hist, rate_floor=float(cfg["rate_floor"]))
        if not report_obj.reliable and hist.singular:
            raise UnreliableClassificationError("fewer than three decades of snapshots")
        if "classification" in enabled:
            _check(checks, "nesting", report_obj.nesting_holds(), report_obj.nesting_holds(), True, "nested singular sets")
            values["singular_counts"] = {k: int(np.count_nonzero(v)) for k, v in report_obj.flags.items()}
        if "coincidence" in enabled:
            cc = singular.coincidence_check(report_obj)
            values["coincidence_layer"] = cc.max_layer_width
            _check(checks, "coincidence", cc.agree, cc.interior_disagreements, 0, "five sets agree up to a two-cell layer")
        if "rate_bands" in enabled and hist.singular:
            rb = singular.rate_band_decomposition(hist, report_obj)
            values["c_tilde"] = rb.c_tilde
            _check(checks, "rate_band_integral", rb.integral_bound_ok, rb.integral_margin, 0.0, "time-integral lower bound on the bands")
            _check(checks, "rate_band_volume", rb.volume_bound_ok, rb.volume_margin, 0.0, "band volume decay bound")
        if "volume_decay" in enabled and hist.singular:
            _, series_v, expn, ratio = singular.volume_decay(hist, report_obj)
            values["volume_ratio"] = ratio
            values["volume_exponent"] = expn
            if name == "sphere":
                _check(checks, "volume_exponent", expn is not None and abs(expn - n / 2.0) <= 0.05, expn, n / 2.0, "whole-manifold volume decay exponent")
            if name == "neckpinch":
                _check(checks, "volume_vanishes", ratio < 1e-2, ratio, 1e-2, "singular set volume final/initial")
        if "blowup" in enabled and hist.singular:
            bp = singular.blowup_profile(hist, base_singular)
            values["blowup_family"] = bp.family
            values["blowup_R_rescaled"] = bp.base_scalar_rescaled
            _write_profile_csv(out / "blowup_profile.csv", bp)
            if name == "sphere":
                _check(checks, "blowup", bp.family == "Sphere" and bp.nontrivial, bp.family, "Sphere", "self-similar profile")
            elif name == "neckpinch":
                rel = abs(bp.base_scalar_rescaled / ((n - 1) / 2.0) - 1.0)
                ok = bp.family == "Cylinder" and rel <= 5e-2
                _check(checks, "blowup", ok, bp.base_scalar_rescaled, (n - 1) / 2.0, "neck rescaled scalar curvature within 5%")
                bpc = singular.blowup_profile(hist, base_regular)
                values["cap_riem_rescaled"] = bpc.base_riem_rescaled
                _check(checks, "blowup_cap", bpc.family == "Flat" and bpc.base_riem_rescaled <= 1e-2,
                       bpc.base_riem_rescaled, 1e-2, "polar cap rescaled curvature vanishes")

    if "ball_inclusion" in enabled and name in ("sphere", "gaussian"):
        times = [t for t in hist.times if (hist.T_hat is None or t < hist.T_hat)][:24]
        cfields = [curvature_field(hist.metric_at(t)) for t in times]
        M = max(cf.sup_ricci for cf in cfields) * 1.0001 + 1e-12
        p_ball = dom[0] if name == "sphere" else 0.5 * (dom[0] + dom[1])
        bc = ball_inclusion_check(hist, p_ball, r=0.5, ricci_bound=M, times=times, curve_samples=150, seed=seed)
        values["ball_verdicts_true"] = bc.all_true
        values["ball_curve_samples"] = bc.curve_samples
        ok = bc.all_true and bc.curve_violations == 0 and bc.curve_samples >= 100
        _check(checks, "ball_inclusion", ok, bc.curve_violations, 0, f"{bc.curve_samples} sampled curves; hypothesis bound {M:.3g}")

    provenance = {
        "config": dict(cfg.values),
        "config_digest": cfg.digest(),
        "norm_convention": RM_NORM_CONVENTION,
        "reduced_distance_note": "single-sequence guarded construction; no infimum over subsequences",
        "eta_note": "gap threshold is configurable, not the theoretical constant",
        "status": hist.status,
    }
    report = VerificationReport(
        schema_version=SCHEMA_VERSION,
        scenario=name,
        config_digest=cfg.digest(),
        checks=checks,
        values=_jsonable(values),
        provenance=provenance,
    )
    (out / "report.json").write_text(report.to_json(), encoding="utf-8")
    manifest = {
        "schema_version": SCHEMA_VERSION,
        "scenario": name,
        "config": dict(cfg.values),
        "config_digest": cfg.digest(),
        "T_hat": hist.T_hat,
        "type_one": None
        if hist.type_one is None
        else {"C_fit": hist.type_one.C_fit, "c_fit": hist.type_one.c_fit, "min_product": hist.type_one.min_product},
        "diagnostics": _jsonable(hist.diagnostics),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True), encoding="utf-8")
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    return report


class UnreliableClassificationError(RuntimeError):
    pass


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj


def _write_series_csv(path: Path, series: reduced.ReducedVolumeSeries):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# q_coordinate, t_bar, l, converged, v, V_tilde\n")
        for sample in series.samples:
            for q, v in zip(sample.density_q, sample.density_v):
                tau = series.base_time - sample.tbar
                l_val = -math.log(max(v, 1e-300) * (4.0 * math.pi * tau) ** (1.5))
                fh.write(
                    f"{q:.12g},{sample.tbar:.12g},{l_val:.12g},{int(sample.all_converged)},{v:.12g},{sample.value:.12g}\n"
                )


def _write_profile_csv(path: Path, bp: singular.ProfileComparison):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("# s, psi_rescaled, psi_model\n")
        for s, a, b in zip(bp.profile_s, bp.profile_psi, bp.model_psi):
            fh.write(f"{s:.12g},{a:.12g},{b:.12g}\n")


def compare_reports(a: dict, b: dict, rel_tol: float = 5e-3) -> dict:
    """Structured diff of two reports beyond tolerance; empty means equal."""
    if a.get("schema_version") != b.get("schema_version"):
        raise ValueError("schema version mismatch")
    diff: dict = {}
    keys = set(a.get("values", {})) | set(b.get("values", {}))
    for key in sorted(keys):
        va = a.get("values", {}).get(key)
        vb = b.get("values", {}).get(key)
        if isinstance(va, float) and isinstance(vb, float):
            scale = max(abs(va), abs(vb), 1e-12)
            if abs(va - vb) / scale > rel_tol:
                diff[key] = {"a": va, "b": vb}
        elif va != vb:
            diff[key] = {"a": va, "b": vb}
    status_a = {c["name"]: c["status"] for c in a.get("checks", [])}
    status_b = {c["name"]: c["status"] for c in b.get("checks", [])}
    for name in sorted(set(status_a) | set(status_b)):
        if status_a.get(name) != status_b.get(name):
            diff[f"check:{name}"] = {"a": status_a.get(name), "b": status_b.get(name)}
    return diff


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="riccilab", description="Type I flow scenario runner")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a scenario and write its reports")
    p_run.add_argument("scenario", nargs="?", default=None, choices=sorted(SCENARIO_OVERRIDES))
    p_run.add_argument("--config", default=None, help="path to a key-value config file")
    p_run.add_argument("--out", default=None, help="output directory")
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--check", action="append", default=None, help="enable only this check (repeatable)")

    p_cmp = sub.add_parser("compare", help="diff two report.json files")
    p_cmp.add_argument("report_a")
    p_cmp.add_argument("report_b")
    p_cmp.add_argument("--rel-tol", type=float, default=5e-3)

    sub.add_parser("list-scenarios", help="list known scenarios")

    args = parser.parse_args(argv)

    if args.command == "list-scenarios":
        for name in sorted(SCENARIO_OVERRIDES):
            print(name)
        return 0

    if args.command == "compare":
        try:
            a = json.loads(Path(args.report_a).read_text(encoding="utf-8"))
            b = json.loads(Path(args.report_b).read_text(encoding="utf-8"))
            diff = compare_reports(a, b, rel_tol=args.rel_tol)
        except (OSError, ValueError, json.JSONDecodeError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(json.dumps(diff, indent=2, sort_keys=True))
        return 0 if not diff else 1

    try:
        if args.config:
            cfg = ScenarioConfig.from_file(args.config)
            if args.scenario:
                cfg.set("scenario", args.scenario)
        else:
            if not args.scenario:
                print("error: need a scenario name or --config", file=sys.stderr)
                return 2
            cfg = ScenarioConfig.for_scenario(args.scenario)
        cfg.apply_env()
        if args.seed is not None:
            cfg.set("seed", args.seed)
        if args.check:
            cfg.set("checks", ",".join(args.check))
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2

    try:
        report = run_scenario(cfg, out_dir=args.out)
    except SolverInstabilityError as exc:
        print(f"solver instability: {exc}", file=sys.stderr)
        return 3
    except UnreliableClassificationError as exc:
        print(f"unreliable classification: {exc}", file=sys.stderr)
        return 4

    for check in report.checks:
        print(f"[{check['status']:>12}] {check['name']}: measured={check['measured']} tol={check['tolerance']}")
    print("result:", "PASS" if report.all_passed else "FAIL")
    return 0 if report.all_passed else 1


if __name__ == "__main__":
    sys.exit(main())
