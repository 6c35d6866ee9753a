"""Controller-variant comparisons on drifting potentials and their pass/fail checks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .analysis import CriteriaConfig, CriteriaReport, Psd, evaluate_criteria, welch_psd, well_peak_ratio
from .control import ControllerVariant
from .dynamics import RunRecord, run_closed_loop

VARIANTS = (ControllerVariant.NON_ADAPTIVE_1D.value, ControllerVariant.ADAPTIVE_1D.value,
            ControllerVariant.ADAPTIVE_2D.value)


@dataclass
class Check:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def criteria_config(scenario) -> CriteriaConfig:
    a = scenario.analysis
    return CriteriaConfig(t_avg=a.t_avg_s, bins=a.hist_bins, f_well=scenario.potential_cfg.f_well_hz,
                          band=a.well_band_fraction, peak_factor=a.well_peak_factor, segment_s=a.welch_segment_s)


def run_variants(scenario, variants=VARIANTS) -> dict:
    """Run each controller variant on the same scenario, seeds and initial state."""
    out = {}
    for v in variants:
        sv = scenario.with_variant(v)
        out[v] = run_closed_loop(sv, sv.design())
    return out


def drift_schedule(scenario) -> tuple[float, float]:
    """(onset, end) times of the misalignment ramp: first and last knot of the offset channels."""
    times = []
    for ch in (scenario.drift_cfg.delta0_m, scenario.drift_cfg.delta1_m):
        times += [k[0] for k in ch.knots]
    if not times:
        return 0.0, 0.0
    return float(min(times)), float(max(times))


def window_std(report: CriteriaReport) -> float:
    """Mean of the per-window standard deviations of chi_x."""
    return float(np.mean(report.chi_std)) if len(report.chi_std) else float("nan")


def segment_psd(rec: RunRecord, t_from: float, segment_s: float = 1e-3) -> Psd:
    sel = rec.t >= t_from
    x = rec["chi_x"][sel]
    n = max(8, int(round(segment_s * rec.sample_rate)))
    return welch_psd(x, rec.sample_rate, min(n, x.size))


@dataclass
class Comparison:
    records: dict
    reports: dict
    onset: float
    ramp_end: float
    cfg: CriteriaConfig

    def psd(self, variant: str) -> Psd:
        return segment_psd(self.records[variant], self.ramp_end, self.cfg.segment_s)


def compare(scenario, variants=VARIANTS) -> Comparison:
    recs = run_variants(scenario, variants)
    cfg = criteria_config(scenario)
    reps = {v: evaluate_criteria(r, cfg) for v, r in recs.items() if len(r) >= cfg.t_avg * r.sample_rate}
    onset, end = drift_schedule(scenario)
    return Comparison(recs, reps, onset, end, cfg)


def drift_checks(cmp: Comparison) -> list[Check]:
    """Zero-mean force and residual-spread checks of the three-variant drift comparison."""
    na, a1, a2 = VARIANTS
    out = []
    lost = [v for v, r in cmp.records.items() if r.lost]
    out.append(Check("no particle lost", not lost, "lost: " + (", ".join(lost) if lost else "none")))
    if lost:
        return out
    rn = cmp.reports[na]
    post = rn.t_start >= cmp.onset
    frac = float(np.mean(~rn.zero_mean_force[post])) if post.any() else 0.0
    out.append(Check(f"{na} loses zero-mean force after the ramp onset", frac >= 0.5,
                     f"non-zero-mean in {frac:.0%} of windows after t = {cmp.onset * 1e3:g} ms"))
    for v in (a1, a2):
        zm = cmp.reports[v].zero_mean_force
        out.append(Check(f"{v} keeps zero-mean force throughout", bool(zm.all()),
                         f"zero-mean in {zm.mean():.0%} of windows"))
    s = {v: window_std(cmp.reports[v]) for v in VARIANTS}
    out.append(Check("std ordering Adaptive2D < NonAdaptive1D <= Adaptive1D", s[a2] < s[na] <= s[a1],
                     ", ".join(f"{v} {s[v] * 1e3:.1f} mV" for v in VARIANTS)))
    ratio = s[a2] / s[a1]
    out.append(Check("Adaptive2D / Adaptive1D std in [0.4, 0.8]", 0.4 <= ratio <= 0.8, f"ratio {ratio:.3f}"))
    return out


def spectral_checks(cmp: Comparison, low_band_hz: float = 10e3) -> list[Check]:
    """Well-peak and low-frequency checks on the sustained-misalignment segment."""
    na, a1, a2 = VARIANTS
    out = []
    if any(r.lost for r in cmp.records.values()):
        return [Check("no particle lost", False, "a variant lost the particle")]
    psds = {v: cmp.psd(v) for v in VARIANTS}
    ratio = {v: well_peak_ratio(psds[v], cmp.cfg.f_well, cmp.cfg.band) for v in VARIANTS}
    out.append(Check(f"{na} shows the well peak", ratio[na] >= cmp.cfg.peak_factor,
                     f"peak ratio {ratio[na]:.2f} (threshold {cmp.cfg.peak_factor:g})"))
    for v in (a1, a2):
        out.append(Check(f"{v} shows no well peak", ratio[v] < cmp.cfg.peak_factor, f"peak ratio {ratio[v]:.2f}"))
    low = {v: psds[v].band_power(0.0, low_band_hz) for v in VARIANTS}
    out.append(Check(f"{a2} has less power below {low_band_hz / 1e3:g} kHz than {na}", low[a2] < low[na],
                     f"{a2} {low[a2]:.3e} V^2, {na} {low[na]:.3e} V^2"))
    return out


def constraint_checks(rec: RunRecord, scenario, recover_s: float = 10e-3) -> list[Check]:
    """Saturation and recovery of the projected apex estimate on a ramp past the feasible set."""
    out = [Check("no particle lost", not rec.lost, rec.status)]
    if rec.lost:
        return out
    amax = scenario.apex_max_m()
    est = rec["xhat_apex"]
    peak = float(np.max(np.abs(est)))
    out.append(Check("projected apex estimate stays within and reaches +-apex_max",
                     peak <= amax * (1 + 1e-12) and peak >= amax * (1 - 1e-9),
                     f"max |estimate| {peak * 1e9:.3f} nm, apex_max {amax * 1e9:.3f} nm"))
    outside = np.abs(rec["apex_true"]) > amax
    if not outside.any():
        out.append(Check("apex leaves the feasible set", False, "true apex never exceeds apex_max"))
        return out
    t_back = float(rec.t[np.flatnonzero(outside)[-1]])
    rep = evaluate_criteria(rec, criteria_config(scenario))
    after = (rep.t_start >= t_back) & rep.zero_mean_force
    t_ok = float(rep.t_start[after][0]) if after.any() else float("inf")
    out.append(Check(f"zero-mean force regained within {recover_s * 1e3:g} ms of re-entry", t_ok - t_back <= recover_s,
                     f"apex re-enters at {t_back * 1e3:.2f} ms, first zero-mean window starts {t_ok * 1e3:.2f} ms"))
    return out
