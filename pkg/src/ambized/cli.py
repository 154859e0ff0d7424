"""Command-line entry point.

    ambized psl [--code npc25]
    ambized calibrate    --scenario FILE --out DIR
    ambized detect       --scenario FILE --out DIR [--per-subcarrier]
    ambized sweep-roc    --scenario FILE --out DIR
    ambized sweep-margin --scenario FILE --out DIR

All outputs are computed before anything is written, so a failed run
leaves no partial files behind.
"""

from __future__ import annotations

import argparse
import logging
import math
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .channel import synthesize
from .detector import DetectionReport
from .harness import (
    H0Calibration,
    TrialMetrics,
    calibrate_h0,
    calibrated_detector,
    csv_text,
    eta2_for_pd,
    margin_sweep,
    roc_sweep,
    run_h0,
    run_single_tag,
    run_two_tag,
    trial_setup,
    truth_indices,
)
from .scenario import NAMED_CODES, ScenarioError, ScenarioFile, load_scenario
from .sequences import BitSequence, psl_db

log = logging.getLogger("ambized")


class UsageError(Exception):
    pass


def _pfa_list(text: str) -> list[float]:
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")
    if not vals:
        raise argparse.ArgumentTypeError("empty p_fa list")
    return vals


def _positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _seed(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}")
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ambized",
        description="Backscatter tag detection over LTE reference signals: synthesis, "
                    "Neyman-Pearson detection and Monte Carlo sweeps.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("psl", help="peak-to-sidelobe level of a code")
    p.add_argument("--code", default=None,
                   help="npc25, barker13 or a bit string such as 1,1,0,1 (default: npc25, "
                        "or the scenario's code)")
    p.add_argument("--scenario", type=Path, help="take the code from a scenario file")

    def common(sp):
        sp.add_argument("--scenario", type=Path, required=True, help="YAML scenario file")
        sp.add_argument("--out", type=Path, required=True, help="output directory")
        sp.add_argument("--seed", type=_seed, help="seed base (overrides run.seed)")
        sp.add_argument("--trials", type=_positive_int, help="trial count (overrides run.trials)")
        sp.add_argument("--pfa", type=_pfa_list, help="comma-separated p_fa targets (overrides detector.p_fa)")
        sp.add_argument("--workers", type=_positive_int, default=1,
                        help="worker processes (default 1, sequential)")

    common(sub.add_parser("calibrate", help="H0 variance and threshold table"))
    d = sub.add_parser("detect", help="synthesize, detect and score the scenario")
    common(d)
    d.add_argument("--per-subcarrier", action="store_true",
                   help="also write the per-subcarrier contrast of the first trial")
    common(sub.add_parser("sweep-roc", help="observed vs predicted detection probability"))
    common(sub.add_parser("sweep-margin", help="secondary errors for each margin"))
    return parser


# --------------------------------------------------------------------------
# Subcommands; each returns {filename: text} plus summary lines
# --------------------------------------------------------------------------

def _calibration_lines(cal: H0Calibration, p_fa) -> list[str]:
    lines = [
        f"H0 variance of R_M: {cal.var_hat!r}",
        f"H0 mean: {cal.mean!r}",
        f"skewness: {cal.skewness!r}  excess kurtosis: {cal.excess_kurtosis!r}",
        f"windows: {cal.n_windows} ({cal.n_independent} independent)",
    ]
    if cal.insufficient:
        lines.append("WARNING: fewer than 1000 independent calibration windows")
    for p in p_fa:
        lines.append(f"p_fa {p!r}: r* = {cal.threshold(p)!r}" if cal.var_hat > 0 else
                     f"p_fa {p!r}: no threshold (zero H0 variance)")
    return lines


def _calibrate(sf: ScenarioFile, workers: int):
    spec = replace(sf.spec, scenario=sf.spec.scenario.without_tags())
    cal = calibrate_h0(spec)
    rows = [(p, cal.threshold(p) if cal.var_hat > 0 else None, cal.var_hat, cal.mean, cal.skewness,
             cal.excess_kurtosis, cal.n_windows, cal.n_independent, cal.insufficient)
            for p in sf.spec.p_fa_targets]
    files = {"calibration.csv": csv_text(
        ["p_fa", "r_star", "var_hat", "mean", "skewness", "excess_kurtosis", "n_windows",
         "n_independent", "insufficient"], rows)}
    return files, _calibration_lines(cal, sf.spec.p_fa_targets), cal


def _require_var(cal: H0Calibration):
    if not cal.var_hat > 0:
        raise UsageError("noise.sigma2: zero H0 variance, no Neyman-Pearson threshold exists")


def _metrics_csv(m: TrialMetrics) -> str:
    rows = m.rows()
    header = list(rows[0])
    return csv_text(header, [[r[h] for h in header] for r in rows])


def _report_rows(reports: list[DetectionReport], truths: np.ndarray, tol: int):
    rows = []
    for i, rep in enumerate(reports):
        def label(peak):
            if peak is None:
                return ""
            return "correct" if truths.size and np.min(np.abs(truths - peak.index)) <= tol else "false_alarm"
        p, s = rep.primary, rep.secondary
        rows.append((
            i, rep.window[0], rep.window[1], rep.r_star, rep.s_db,
            None if p is None else p.index, rep.primary_time, None if p is None else p.level_db, label(p),
            None if s is None else s.index, rep.secondary_time, None if s is None else s.level_db, label(s),
        ))
    return rows


def _first_trial(sf: ScenarioFile, cal: H0Calibration, per_subcarrier: bool):
    spec = sf.spec
    det = calibrated_detector(spec, cal)
    tags, chans, noise = trial_setup(spec, 0)
    cap = synthesize(spec.scenario.grid, tags, chans, noise, spec.duration)
    ct = det.contrast_trace(cap, per_subcarrier=per_subcarrier)
    files = {"trace.csv": csv_text(["n", "t_seconds", "R_M"],
                                   [(n, t, v) for n, (t, v) in enumerate(zip(ct.times, ct.r_m))])}
    if per_subcarrier:
        k_rows = []
        for k in range(ct.r.shape[0]):
            for n in range(ct.r.shape[1]):
                k_rows.append((k, n, ct.r[k, n], ct.lam[n]))
        files["subcarriers.csv"] = csv_text(["k", "n", "R", "lambda"], k_rows)
    truths = truth_indices(tags, ct)
    reports = det.detect(ct)
    files["detections.csv"] = csv_text(
        ["window", "start", "stop", "r_star", "s_db", "primary_index", "primary_time", "primary_db",
         "primary_label", "secondary_index", "secondary_time", "secondary_db", "secondary_label"],
        _report_rows(reports, truths, ct.delta_t))
    return files


def _detect(sf: ScenarioFile, workers: int, per_subcarrier: bool = False):
    spec = sf.spec
    files, lines, cal = _calibrate(sf, workers)
    _require_var(cal)
    n_tags = len(spec.scenario.tags)
    if n_tags == 0:
        m = run_h0(spec, cal, workers)
        lines.append(f"trials: {m.n_trials}, windows scored per target (one per bit): {int(m.windows[0])}")
        for j, p in enumerate(spec.p_fa_targets):
            rate = float(m.exceed[j]) / max(int(m.windows[j]), 1)
            lines.append(f"p_fa {p!r}: declared-detection rate {rate!r} "
                         f"({int(m.exceed[j])}/{int(m.windows[j])})")
    elif n_tags == 1:
        m = run_single_tag(spec, cal, workers)
        lines.append(f"trials: {m.n_trials}, mean eta2 at the true alignment: {m.mean_eta2!r}")
        for j, p in enumerate(spec.p_fa_targets):
            lines.append(f"p_fa {p!r}: P_D observed {float(m.p_d_observed[j])!r}, predicted "
                         f"{float(m.p_d_predicted[j])!r}; peaks correct {int(m.correct[j])}, missed "
                         f"{int(m.missed[j])}, false alarms {int(m.false_alarms[j])}")
    else:
        m = run_two_tag(spec, cal, workers)
        lines.append(f"trials: {m.n_trials}, windows: {int(m.windows[0])}")
        for j, p in enumerate(spec.p_fa_targets):
            lines.append(f"p_fa {p!r}: primary correct {int(m.correct[j])}, missed {int(m.missed[j])}, "
                         f"false alarms {int(m.false_alarms[j])}; secondary present "
                         f"{int(m.sec_present[j])}, correct {int(m.sec_correct[j])}, missed "
                         f"{int(m.sec_missed[j])}, false alarms {int(m.sec_false_alarms[j])}, "
                         f"rate {float(m.secondary_rate[j])!r}")
    files["metrics.csv"] = _metrics_csv(m)
    if m.timing_errors:
        files["timing_errors.csv"] = csv_text(["trial", "p_fa", "error_samples"],
                                              [(t, spec.p_fa_targets[j], e) for t, j, e in m.timing_errors])
    files.update(_first_trial(sf, cal, per_subcarrier))
    return files, lines


def _sweep_roc(sf: ScenarioFile, workers: int):
    spec = sf.spec
    if len(spec.scenario.tags) != 1:
        raise UsageError("tags: sweep-roc needs exactly one tag")
    if not sf.eta2 and not sf.p_d:
        raise UsageError("sweeps: sweep-roc needs sweeps.eta2 or sweeps.p_d")
    files, lines, cal = _calibrate(sf, workers)
    _require_var(cal)
    eta2 = list(sf.eta2)
    if sf.p_d:
        eta2 += [float(e) for e in eta2_for_pd(cal, spec.p_fa_targets[0], sf.p_d)]
    rows = roc_sweep(spec, eta2, sf.roc_p_fa, cal, workers)
    files["roc.csv"] = csv_text(["eta2", "p_fa", "r_star", "p_d_predicted", "p_d_observed", "n_trials"],
                                [(r.eta2, r.p_fa, r.r_star, r.p_d_predicted, r.p_d_observed, r.n_trials)
                                 for r in rows])
    gap = max(abs(r.p_d_observed - r.p_d_predicted) for r in rows)
    lines.append(f"ROC points: {len(rows)} at {spec.n_trials} trials each; "
                 f"max |observed - predicted| = {gap!r}")
    return files, lines


def _sweep_margin(sf: ScenarioFile, workers: int):
    spec = sf.spec
    if len(spec.scenario.tags) != 2:
        raise UsageError("tags: sweep-margin needs two tags")
    if not sf.margins:
        raise UsageError("sweeps.margins: sweep-margin needs a margin list")
    files, lines, cal = _calibrate(sf, workers)
    _require_var(cal)
    rows = margin_sweep(spec, sf.margins, cal, workers)
    files["margin.csv"] = csv_text(
        ["margin_db", "windows", "secondary_present", "false_alarms", "missed_detections", "errors"],
        [(r.margin_db, r.windows, r.secondary_present, r.false_alarms, r.missed_detections, r.errors)
         for r in rows])
    best = min(rows, key=lambda r: (r.errors, r.margin_db))
    lines.append(f"margins: {', '.join(f'{r.margin_db:g} dB -> {r.errors}' for r in rows)}")
    lines.append(f"fewest false alarms + missed detections at M = {best.margin_db:g} dB")
    return files, lines


def _psl(args) -> int:
    if args.code is not None:
        name = args.code
        code = NAMED_CODES[name]() if name in NAMED_CODES else BitSequence.from_string(name)
    elif args.scenario is not None:
        code = load_scenario(args.scenario).spec.scenario.code
    else:
        code = NAMED_CODES["npc25"]()
    val = psl_db(code)
    # truncated, not rounded, to two decimals: 21.938 dB shows as 21.93
    print("inf dB" if math.isinf(val) else f"{math.floor(val * 100) / 100:.2f} dB")
    return 0


def _write(out: Path, files: dict[str, str], lines: list[str]):
    out.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        (out / name).write_text(text)
    (out / "summary.txt").write_text("\n".join(lines) + "\n")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "psl":
            return _psl(args)
        overrides = {"seed": args.seed, "trials": args.trials, "p_fa": args.pfa}
        sf = load_scenario(args.scenario, overrides)
        if args.out.exists() and not args.out.is_dir():
            raise UsageError(f"--out: {args.out} exists and is not a directory")
        log.info("running %s on %s", args.command, args.scenario)
        if args.command == "calibrate":
            files, lines, _ = _calibrate(sf, args.workers)
        elif args.command == "detect":
            files, lines = _detect(sf, args.workers, args.per_subcarrier)
        elif args.command == "sweep-roc":
            files, lines = _sweep_roc(sf, args.workers)
        else:
            files, lines = _sweep_margin(sf, args.workers)
        _write(args.out, files, lines)
    except (ScenarioError, UsageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    print("\n".join(lines))
    return 0


if __name__ == "__main__":
    sys.exit(main())
