"""Command line: design controllers, simulate, analyze traces and reproduce the variant comparisons.

Exit codes: 0 ok, 2 invalid input, 3 synthesis failure, 4 particle lost.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis as an
from . import experiments as ex
from .control import SynthesisError, apex_time_constant, estimator_matrix, export_controller, load_controller
from .dynamics import run_closed_loop
from .scenario import ScenarioError, load_scenario
from .traces import TraceFormatError, read_record, write_record

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_SYNTHESIS = 3
EXIT_LOST = 4

FIGURES = {"fig4": "fig4_drift", "fig5": "fig5_misaligned"}


class InvalidInput(Exception):
    pass


def _scenario(args):
    sc = load_scenario(args.scenario)
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    if getattr(args, "variant", None):
        sc = sc.with_variant(args.variant)
    if getattr(args, "duration", None) is not None:
        sc = sc.updated(sim=replace(sc.sim, duration_s=args.duration))
    return sc


def _out_dir(args) -> Path:
    d = Path(args.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def design_report(sc, lqg) -> str:
    """Gains, sampled closed-loop and estimator spectra and the apex-estimator time constant."""
    lines = [f"scenario {sc.name}  variant {lqg.variant.value}  seed {sc.seed}",
             f"sample time {lqg.dt * 1e9:.1f} ns  delay {lqg.delay_samples} samples  apex_max {lqg.apex_max * 1e9:.2f} nm",
             "states " + " ".join(lqg.names),
             "feedback gain k (V per error-state unit) " + " ".join(f"{v:.6e}" for v in lqg.k),
             "augmented gain " + " ".join(f"{v:.6e}" for v in lqg.kaug)]
    for j in range(lqg.L.shape[1]):
        lines.append(f"Kalman gain column {j} " + " ".join(f"{v:.6e}" for v in lqg.L[:, j]))

    def spectrum(M):
        lam = np.linalg.eigvals(M)
        return " ".join(f"{abs(z):.6f}" for z in sorted(lam, key=abs, reverse=True))

    lines.append("closed-loop |eigenvalues| " + spectrum(lqg.closed_loop_error_matrix()))
    lines.append("estimator |eigenvalues| " + spectrum(estimator_matrix(lqg)))
    lines.append(f"spectral radius {lqg.spectral_radius():.8f}")
    tau = apex_time_constant(lqg)
    lines.append("apex estimator time constant " + ("n/a" if tau is None else f"{tau * 1e3:.3f} ms"))
    return "\n".join(lines) + "\n"


def cmd_design(args) -> int:
    sc = _scenario(args)
    lqg = sc.design()
    out = _out_dir(args)
    path = out / f"controller_{lqg.variant.value}.json"
    export_controller(lqg, path)
    rep = design_report(sc, lqg)
    (out / f"design_{lqg.variant.value}.txt").write_text(rep)
    print(rep, end="")
    print(f"controller written to {path}")
    return EXIT_OK


def _write_trace(rec, out: Path, stem: str, fmt: str) -> Path:
    return write_record(rec, out / f"{stem}.{fmt}", fmt)


def cmd_simulate(args) -> int:
    sc = _scenario(args)
    fmt = args.format or sc.output.format
    if args.controller:
        ctrl = load_controller(args.controller)
    elif sc.controller.enabled:
        ctrl = sc.design()
    else:
        ctrl = None
    label = ctrl.variant.value if ctrl is not None else "free"
    rec = run_closed_loop(sc, ctrl)
    out = _out_dir(args)
    path = _write_trace(rec, out, f"trace_{sc.name}_{label}", fmt)
    meta = {"scenario": sc.name, "scenario_hash": sc.hash(), "controller": label, "seed": sc.seed,
            "status": rec.status, "rows": len(rec), "sample_rate_hz": rec.sample_rate, "trace": path.name,
            "controller_faults": rec.faults}
    (out / f"run_{sc.name}_{label}.json").write_text(json.dumps(meta, indent=1) + "\n")
    print(f"{rec.status}: {len(rec)} samples at {rec.sample_rate:g} Hz written to {path} (seed {sc.seed})")
    if (args.plots or sc.output.plots) and len(rec):
        from . import plots

        plots.trace_plot(rec, out / f"trace_{sc.name}_{label}.svg")
    return EXIT_LOST if rec.lost else EXIT_OK


def cmd_analyze(args) -> int:
    cfg = ex.criteria_config(load_scenario(args.scenario)) if args.scenario else an.CriteriaConfig()
    out = _out_dir(args)
    lines = []
    for f in args.records:
        p = Path(f)
        if not p.is_file():
            raise InvalidInput(f"record not found: {f}")
        rec = read_record(p)
        stem = p.stem
        if len(rec) < cfg.t_avg * rec.sample_rate:
            raise InvalidInput(f"{f}: record shorter than one {cfg.t_avg * 1e3:g} ms window")
        rep = an.evaluate_criteria(rec, cfg)
        rep.to_csv(out / f"{stem}_criteria.csv")
        psds = {"chi_x": an.welch_psd(rec["chi_x"], rec.sample_rate, min(len(rec), int(cfg.segment_s * rec.sample_rate))),
                "chi_z": an.welch_psd(rec["chi_z"], rec.sample_rate, min(len(rec), int(cfg.segment_s * rec.sample_rate)))}
        an.psd_to_csv(out / f"{stem}_psd.csv", psds)
        pdf = an.windowed_pdf(rec["chi_x"], rec.sample_rate, cfg.t_avg, cfg.bins)
        an.pdf_to_csv(out / f"{stem}_pdf.csv", pdf)
        lines.append(rep.summary(f"{stem} (seed {rec.seeds.get('base')}, {rec.status})"))
        if args.plots:
            from . import plots

            plots.psd_plot({stem: psds["chi_x"]}, out / f"{stem}_psd.svg", f_well=cfg.f_well)
            plots.pdf_plot({stem: pdf}, out / f"{stem}_pdf.svg")
    text = "\n".join(lines) + "\n"
    (out / "summary.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    if args.figure not in FIGURES:
        raise InvalidInput(f"unknown figure id {args.figure!r}; valid ids: {', '.join(FIGURES)}")
    sc = load_scenario(args.scenario or FIGURES[args.figure])
    if args.seed is not None:
        sc = sc.with_seed(args.seed)
    fmt = args.format or sc.output.format
    out = _out_dir(args)
    cmp = ex.compare(sc)
    for v, rec in cmp.records.items():
        _write_trace(rec, out, f"{args.figure}_{v}", fmt)
    lines = [f"{args.figure}: scenario {sc.name} seed {sc.seed} hash {sc.hash()[:12]}"]
    if args.figure == "fig4":
        for v, rep in cmp.reports.items():
            rep.to_csv(out / f"fig4_{v}_criteria.csv")
            an.pdf_to_csv(out / f"fig4_{v}_pdf.csv", an.windowed_pdf(cmp.records[v]["chi_x"], cmp.records[v].sample_rate,
                                                                      cmp.cfg.t_avg, cmp.cfg.bins))
            lines.append(rep.summary(v))
        checks = ex.drift_checks(cmp)
    else:
        psds = {v: cmp.psd(v) for v in cmp.records if not cmp.records[v].lost}
        if psds:
            an.psd_to_csv(out / "fig5_psd_chi_x.csv", psds)
        checks = ex.spectral_checks(cmp)
    lines += [c.line() for c in checks]
    if args.plots or sc.output.plots:
        from . import plots

        if args.figure == "fig4":
            plots.pdf_evolution_plot(cmp, out / "fig4_pdf_evolution.svg")
        elif psds:
            plots.psd_plot(psds, out / "fig5_psd.svg", f_well=cmp.cfg.f_well)
    text = "\n".join(lines) + "\n"
    (out / f"{args.figure}_summary.txt").write_text(text)
    print(text, end="")
    if any(r.lost for r in cmp.records.values()):
        return EXIT_LOST
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="apexlqg", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, scenario_required=True):
        if scenario_required:
            p.add_argument("--scenario", default="default", help="bundled scenario name or JSON file (default: default)")
        p.add_argument("--out-dir", default="out", help="output directory (created if missing)")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument("--format", choices=("csv", "bin"), default=None, help="trace file format")
        p.add_argument("--plots", action="store_true", help="also write SVG plots")

    p = sub.add_parser("design", help="synthesize a controller and write its artifact and report")
    common(p)
    p.add_argument("--variant", choices=ex.VARIANTS, default=None)
    p.set_defaults(func=cmd_design)

    p = sub.add_parser("simulate", help="run the closed loop and write the trace")
    common(p)
    p.add_argument("--variant", choices=ex.VARIANTS, default=None)
    p.add_argument("--controller", default=None, help="controller artifact from 'design' (default: design inline)")
    p.add_argument("--duration", type=float, default=None, help="override the simulated duration (s)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="evaluate the stabilization criteria on trace files")
    common(p, scenario_required=False)
    p.add_argument("--scenario", default=None, help="scenario supplying analysis settings (optional)")
    p.add_argument("records", nargs="+", help="trace files (.csv or .bin)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("reproduce", help="run the three-variant comparison for a figure")
    common(p, scenario_required=False)
    p.add_argument("--scenario", default=None, help="override the bundled scenario for the figure")
    p.add_argument("figure", help=f"figure id ({', '.join(FIGURES)})")
    p.set_defaults(func=cmd_reproduce)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except (ScenarioError, InvalidInput, TraceFormatError, FileNotFoundError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID
    except SynthesisError as e:
        print(f"synthesis failed: {e}", file=sys.stderr)
        return EXIT_SYNTHESIS


if __name__ == "__main__":
    sys.exit(main())
