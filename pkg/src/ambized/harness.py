"""Monte Carlo driver: H0 calibration, single- and two-tag trials, sweeps.

Every trial ``i`` is seeded with ``seed_base + i``; trials are grouped in
fixed blocks, so aggregates do not depend on the number of workers.
"""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .channel import ChannelCoeffs, GridParams, NoiseModel, ResourceGrid, ZedConfig, synthesize
from .detector import (
    ContrastTrace,
    NPCDetector,
    correlator_bank,
    detect_primary,
    detect_secondary,
    detection_prob,
    np_threshold,
    q_inverse,
    secondary_threshold,
)
from .sequences import TIME_EPS, BitSequence, FskParams, npc25

MIN_CALIBRATION_WINDOWS = 1000
CALIBRATION_CHUNK = 60.0
BLOCK = 16
_CAL_STREAM = 0x5EED


@dataclass(frozen=True)
class Scenario:
    """Physical setup shared by all trials of an experiment."""

    grid: GridParams
    fsk: FskParams
    tags: tuple[ZedConfig, ...]
    chans: ChannelCoeffs
    noise: NoiseModel
    code: BitSequence = field(default_factory=npc25)

    def __post_init__(self):
        if len(self.chans.reflect) != len(self.tags):
            raise ValueError(
                f"{len(self.tags)} tag(s) but {len(self.chans.reflect)} reflected path(s)"
            )

    def without_tags(self) -> "Scenario":
        return replace(self, tags=(), chans=ChannelCoeffs(gamma=self.chans.gamma))


@dataclass(frozen=True)
class DetectorSettings:
    cutoff: float | None = 100.0
    order: int = 4
    margin_db: float = 6.0
    g_psl_db: float | None = None
    exclusion_bits: float = 1.5
    known_noise: bool = True


@dataclass(frozen=True)
class TrialSpec:
    """One Monte Carlo experiment.

    ``t_obs`` is the observation window; ``duration`` the capture length of a
    trial.  Each trial draws fresh noise and, if enabled, fresh tag cycle
    offsets and a fresh carrier phase for every tag after the first.
    """

    scenario: Scenario
    duration: float
    n_trials: int = 1
    p_fa_targets: tuple[float, ...] = (1e-2,)
    t_obs: float | None = None
    seed_base: int = 0
    randomize_offsets: bool = True
    randomize_phase: bool = True
    calibration_duration: float = 60.0
    detector: DetectorSettings = field(default_factory=DetectorSettings)

    def __post_init__(self):
        if self.n_trials < 1:
            raise ValueError("n_trials must be >= 1")
        if not self.p_fa_targets:
            raise ValueError("p_fa_targets must not be empty")
        for p in self.p_fa_targets:
            if not 0.0 < p < 1.0:
                raise ValueError(f"p_fa target {p} outside (0, 1)")
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.t_obs is not None and self.t_obs <= 0:
            raise ValueError("t_obs must be positive")
        if self.calibration_duration <= 0:
            raise ValueError("calibration_duration must be positive")

    @property
    def window(self) -> float:
        if self.t_obs is not None:
            return self.t_obs
        cycles = [t.cycle for t in self.scenario.tags]
        return min(cycles) if cycles else self.duration


# --------------------------------------------------------------------------
# Per-trial setup
# --------------------------------------------------------------------------

def trial_seed(spec: TrialSpec, i: int) -> int:
    return spec.seed_base + i


def trial_setup(spec: TrialSpec, i: int) -> tuple[tuple[ZedConfig, ...], ChannelCoeffs, NoiseModel]:
    """Tags, channel and noise of trial ``i``.

    The trial seed feeds two independent streams: one for the tag offsets
    and phases, one for the noise synthesis.
    """
    sc = spec.scenario
    geo_ss, noise_ss = np.random.SeedSequence(trial_seed(spec, i)).spawn(2)
    rng = np.random.default_rng(geo_ss)
    tags = list(sc.tags)
    reflect = list(sc.chans.reflect)
    for j, tag in enumerate(tags):
        offset = rng.uniform(0.0, tag.cycle)
        theta = rng.uniform(0.0, 2 * np.pi)
        if spec.randomize_offsets:
            tags[j] = replace(tag, start_offset=offset)
        if spec.randomize_phase and j > 0:
            reflect[j] = np.asarray(reflect[j]) * np.exp(1j * theta)
    noise = replace(sc.noise, seed=int(noise_ss.generate_state(1, np.uint64)[0] >> 1))
    return tuple(tags), ChannelCoeffs(gamma=sc.chans.gamma, reflect=tuple(reflect)), noise


def make_detector(spec: TrialSpec, p_fa: float | None = None) -> NPCDetector:
    sc, ds = spec.scenario, spec.detector
    return NPCDetector(
        fsk=sc.fsk, code=sc.code, p_fa=spec.p_fa_targets[0] if p_fa is None else p_fa,
        cutoff=ds.cutoff, order=ds.order,
        sigma2=sc.noise.sigma2 if ds.known_noise else None,
        g_psl_db=ds.g_psl_db, margin_db=ds.margin_db, t_obs=spec.window,
        exclusion_bits=ds.exclusion_bits,
    )


def truth_indices(tags: Sequence[ZedConfig], ct: ContrastTrace) -> np.ndarray:
    """Contrast indices of every sequence start that the trace can score.

    A start maps to the first RS instant at or after it.
    """
    if ct.times.size == 0:
        return np.zeros(0, dtype=int)
    t_end = float(ct.times[-1]) + TIME_EPS
    out = []
    for tag in tags:
        starts = tag.sequence_starts(float(ct.times[0]) - TIME_EPS, t_end)
        out.append(np.searchsorted(ct.times, starts - TIME_EPS, side="left"))
    if not out:
        return np.zeros(0, dtype=int)
    idx = np.sort(np.concatenate(out))
    return idx[idx < ct.r_m.size]


def _run_blocks(fn: Callable, spec: TrialSpec, n: int, workers: int, *args) -> list:
    """Apply ``fn(spec, lo, hi, *args)`` over fixed trial blocks, in order."""
    blocks = [(lo, min(lo + BLOCK, n)) for lo in range(0, n, BLOCK)]
    if workers is None or workers <= 1 or len(blocks) == 1:
        return [fn(spec, lo, hi, *args) for lo, hi in blocks]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        futs = [pool.submit(fn, spec, lo, hi, *args) for lo, hi in blocks]
        return [f.result() for f in futs]


# --------------------------------------------------------------------------
# H0 calibration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class H0Calibration:
    """Statistics of ``R_M`` over tag-free captures."""

    var_hat: float
    mean: float
    skewness: float
    excess_kurtosis: float
    n_windows: int
    n_independent: int
    sigma2: float
    samples_per_bit: int

    @property
    def insufficient(self) -> bool:
        return self.n_independent < MIN_CALIBRATION_WINDOWS

    def threshold(self, p_fa: float) -> float:
        return np_threshold(self.var_hat, p_fa)


def h0_capture(spec: TrialSpec, chunk: int, duration: float) -> ResourceGrid:
    sc = spec.scenario
    ss = np.random.SeedSequence([spec.seed_base, _CAL_STREAM, chunk])
    noise = replace(sc.noise, seed=int(ss.generate_state(1, np.uint64)[0] >> 1))
    return synthesize(sc.grid, (), ChannelCoeffs(gamma=sc.chans.gamma), noise, duration)


def calibrate_h0(spec: TrialSpec) -> H0Calibration:
    """Variance, mean and shape of ``R_M(n)`` with no tag present.

    The capture of ``spec.calibration_duration`` seconds is synthesized in
    chunks of at most one minute.  Independent windows are counted at a
    stride of one bit.
    """
    if spec.scenario.tags:
        raise ValueError("calibrate_h0 needs a scenario with zero tags")
    det = make_detector(spec)
    sigma2 = spec.scenario.noise.sigma2
    n_chunks = max(1, math.ceil(spec.calibration_duration / CALIBRATION_CHUNK - 1e-9))
    chunk_len = spec.calibration_duration / n_chunks
    streams, delta_t = [], 1
    for c in range(n_chunks):
        cap = h0_capture(spec, c, chunk_len)
        ct = det.contrast_trace(cap)
        delta_t = ct.delta_t
        streams.append(ct.r_m)
    r_m = np.concatenate(streams)
    n = r_m.size
    var = float(np.var(r_m, ddof=1)) if n > 1 else 0.0
    # rounding residue of an exactly cancelled direct path counts as zero
    scale = spec.scenario.grid.pilot_power * max(1.0, float(np.max(np.abs(spec.scenario.chans.direct(1))) ** 2))
    degenerate = var <= (1e-12 * scale) ** 2
    return H0Calibration(
        var_hat=0.0 if degenerate else var,
        mean=float(np.mean(r_m)) if n else 0.0,
        skewness=0.0 if degenerate or n < 3 else float(stats.skew(r_m)),
        excess_kurtosis=0.0 if degenerate or n < 4 else float(stats.kurtosis(r_m)),
        n_windows=n,
        n_independent=sum(s.size // delta_t for s in streams),
        sigma2=sigma2,
        samples_per_bit=delta_t,
    )


def calibrated_detector(spec: TrialSpec, cal: H0Calibration, p_fa: float | None = None) -> NPCDetector:
    return make_detector(spec, p_fa).set_calibration(cal.var_hat, cal.sigma2)


# --------------------------------------------------------------------------
# Metrics
# --------------------------------------------------------------------------

_COUNTS = (
    "windows", "declared", "correct", "missed", "false_alarms", "exceed",
    "sec_present", "sec_declared", "sec_correct", "sec_missed", "sec_false_alarms",
)


@dataclass
class TrialMetrics:
    """Detection accounting, one count per p_fa target.

    Primary: every scored window ends as exactly one of ``correct`` or
    ``missed``; a declaration away from any true start also counts as a
    false alarm.  ``exceed`` counts windows whose contrast at the true
    alignment exceeds ``r*`` (the pointwise detection event).  Secondary
    counts cover windows whose primary was declared.
    Timing errors are ``(trial, p_fa index, samples)`` for correct primaries.
    """

    p_fa_targets: tuple[float, ...]
    n_trials: int = 0
    windows: np.ndarray = None
    declared: np.ndarray = None
    correct: np.ndarray = None
    missed: np.ndarray = None
    false_alarms: np.ndarray = None
    exceed: np.ndarray = None
    sec_present: np.ndarray = None
    sec_declared: np.ndarray = None
    sec_correct: np.ndarray = None
    sec_missed: np.ndarray = None
    sec_false_alarms: np.ndarray = None
    p_d_pred_sum: np.ndarray = None
    eta2_sum: float = 0.0
    timing_errors: tuple = ()

    def __post_init__(self):
        m = len(self.p_fa_targets)
        for name in _COUNTS:
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(m, dtype=np.int64))
        if self.p_d_pred_sum is None:
            self.p_d_pred_sum = np.zeros(m)

    def __add__(self, other: "TrialMetrics") -> "TrialMetrics":
        if tuple(other.p_fa_targets) != tuple(self.p_fa_targets):
            raise ValueError("cannot merge metrics for different p_fa targets")
        out = TrialMetrics(self.p_fa_targets, n_trials=self.n_trials + other.n_trials)
        for name in _COUNTS:
            setattr(out, name, getattr(self, name) + getattr(other, name))
        out.p_d_pred_sum = self.p_d_pred_sum + other.p_d_pred_sum
        out.eta2_sum = self.eta2_sum + other.eta2_sum
        out.timing_errors = tuple(sorted(self.timing_errors + other.timing_errors))
        return out

    @property
    def p_d_observed(self) -> np.ndarray:
        return self.exceed / np.maximum(self.windows, 1)

    @property
    def p_d_predicted(self) -> np.ndarray:
        return self.p_d_pred_sum / max(self.n_trials, 1)

    @property
    def primary_rate(self) -> np.ndarray:
        return self.correct / np.maximum(self.windows, 1)

    @property
    def secondary_rate(self) -> np.ndarray:
        return self.sec_correct / np.maximum(self.sec_present, 1)

    @property
    def mean_eta2(self) -> float:
        return self.eta2_sum / max(self.n_trials, 1)

    def rows(self) -> list[dict]:
        out = []
        for j, p in enumerate(self.p_fa_targets):
            row = {"p_fa": p, "n_trials": self.n_trials}
            for name in _COUNTS:
                row[name] = int(getattr(self, name)[j])
            row["p_d_observed"] = float(self.p_d_observed[j])
            row["p_d_predicted"] = float(self.p_d_predicted[j])
            row["secondary_rate"] = float(self.secondary_rate[j])
            out.append(row)
        return out


def _reduce(parts: Sequence[TrialMetrics], p_fa_targets) -> TrialMetrics:
    total = TrialMetrics(tuple(p_fa_targets))
    for p in parts:
        total = total + p
    return total


def _primary_outcome(m: TrialMetrics, j: int, peak, truths: np.ndarray, tol: int, trial: int):
    """Book one primary decision; returns the matched truth index or None."""
    m.windows[j] += 1
    if peak is None:
        m.missed[j] += 1
        return None
    m.declared[j] += 1
    if truths.size:
        err = truths - peak.index
        k = int(np.argmin(np.abs(err)))
        if abs(int(err[k])) <= tol:
            m.correct[j] += 1
            m.timing_errors = m.timing_errors + ((trial, j, int(-err[k])),)
            return int(truths[k])
    m.false_alarms[j] += 1
    m.missed[j] += 1
    return None


# --------------------------------------------------------------------------
# Single tag
# --------------------------------------------------------------------------

def _single_block(spec: TrialSpec, lo: int, hi: int, cal: H0Calibration) -> TrialMetrics:
    sc = spec.scenario
    det = calibrated_detector(spec, cal)
    r_stars = [cal.threshold(p) for p in spec.p_fa_targets]
    m = TrialMetrics(tuple(spec.p_fa_targets), n_trials=hi - lo)
    for i in range(lo, hi):
        tags, chans, noise = trial_setup(spec, i)
        cap = synthesize(sc.grid, tags, chans, noise, spec.duration)
        ct = det.contrast_trace(cap)
        clean = synthesize(sc.grid, tags, chans, replace(noise, sigma2=0.0), spec.duration)
        r_clean = det.contrast_trace(clean).r_m
        truths = truth_indices(tags, ct)
        if truths.size == 0:
            raise ValueError("capture too short to score any sequence start")
        n0 = int(truths[0])
        eta2 = max(float(r_clean[n0]), 0.0)  # zero-tag round-off may dip below 0
        m.eta2_sum += eta2
        win = max(1, int(round(spec.window / _dt(ct))))
        start = max(0, n0 - win // 2)
        stop = min(ct.r_m.size, start + win)
        tol = ct.delta_t
        for j, r_star in enumerate(r_stars):
            m.p_d_pred_sum[j] += float(detection_prob(r_star, cal.var_hat, eta2))
            m.exceed[j] += int(ct.r_m[n0] > r_star)
            peak = detect_primary(ct.r_m, r_star, start, stop)
            _primary_outcome(m, j, peak, truths, tol, i)
    return m


def _dt(ct: ContrastTrace) -> float:
    return float(np.median(np.diff(ct.times))) if ct.times.size > 1 else 1.0


def run_single_tag(spec: TrialSpec, calibration: H0Calibration | None = None,
                   workers: int = 1) -> TrialMetrics:
    """Detect the first sequence of a single tag in every trial.

    The search window of length ``T_obs`` is centred on the true alignment;
    a primary peak within one bit of it is correct.
    """
    if len(spec.scenario.tags) != 1:
        raise ValueError("run_single_tag needs exactly one tag")
    cal = calibration or calibrate_h0(replace(spec, scenario=spec.scenario.without_tags()))
    parts = _run_blocks(_single_block, spec, spec.n_trials, workers, cal)
    return _reduce(parts, spec.p_fa_targets)


# --------------------------------------------------------------------------
# H0 exceedance counting
# --------------------------------------------------------------------------

def _h0_block(spec: TrialSpec, lo: int, hi: int, cal: H0Calibration) -> TrialMetrics:
    sc = spec.scenario
    det = calibrated_detector(spec, cal)
    m = TrialMetrics(tuple(spec.p_fa_targets), n_trials=hi - lo)
    for i in range(lo, hi):
        _, chans, noise = trial_setup(spec, i)
        cap = synthesize(sc.grid, (), chans, noise, spec.duration)
        ct = det.contrast_trace(cap)
        picks = ct.r_m[::ct.delta_t]
        for j, p in enumerate(spec.p_fa_targets):
            m.windows[j] += picks.size
            m.exceed[j] += int(np.count_nonzero(picks > cal.threshold(p)))
    return m


def run_h0(spec: TrialSpec, calibration: H0Calibration | None = None,
           workers: int = 1) -> TrialMetrics:
    """Threshold exceedances on tag-free captures, sampled once per bit.

    ``exceed / windows`` is the empirical false-alarm rate per target.
    """
    if spec.scenario.tags:
        raise ValueError("run_h0 needs a scenario with zero tags")
    cal = calibration or calibrate_h0(spec)
    parts = _run_blocks(_h0_block, spec, spec.n_trials, workers, cal)
    return _reduce(parts, spec.p_fa_targets)


# --------------------------------------------------------------------------
# Two tags
# --------------------------------------------------------------------------

def _window_truths(truths: np.ndarray, start: int, stop: int) -> np.ndarray:
    return truths[(truths >= start) & (truths < stop)]


def classify_windows(det: NPCDetector, ct: ContrastTrace, truths: np.ndarray, m: TrialMetrics,
                     j: int, trial: int, margins_db: Sequence[float] | None = None):
    """Score every full observation window of one trace.

    With ``margins_db`` the secondary decision is repeated for each margin
    and the counts are returned as an array of shape ``(len(margins), 3)``
    holding (present, false alarms, missed); otherwise secondary counts go
    into ``m``.
    """
    r_m = ct.r_m
    win = max(1, int(round(spec_window(det) / _dt(ct))))
    half = win // 2
    excl = int(math.ceil(det.exclusion_bits * ct.delta_t))
    tol = ct.delta_t
    sweep = None if margins_db is None else np.zeros((len(margins_db), 3), dtype=np.int64)
    for start in range(0, r_m.size - win + 1, win):
        stop = start + win
        in_win = _window_truths(truths, start, stop)
        if in_win.size == 0:
            continue
        peak = detect_primary(r_m, det.r_star_, start, stop)
        matched = _primary_outcome(m, j, peak, in_win, tol, trial)
        if peak is None:
            continue
        near = truths[np.abs(truths - peak.index) <= half]
        if matched is not None:
            near = near[np.abs(near - matched) > excl]
        near = near[np.abs(near - peak.index) > excl]
        present = near.size > 0
        margins = [det.margin_db] if margins_db is None else list(margins_db)
        for q, margin in enumerate(margins):
            s_db = secondary_threshold(peak.level_db, det.g_psl_db_, margin)
            sec = detect_secondary(r_m, peak, det.r_star_, s_db, half, excl)
            hit = sec is not None and near.size > 0 and np.min(np.abs(near - sec.index)) <= tol
            fa = sec is not None and not hit
            miss = present and not hit
            if sweep is None:
                m.sec_present[j] += int(present)
                m.sec_declared[j] += int(sec is not None)
                m.sec_correct[j] += int(hit)
                m.sec_false_alarms[j] += int(fa)
                m.sec_missed[j] += int(miss)
            else:
                sweep[q] += (int(present), int(fa), int(miss))
    return sweep


def spec_window(det: NPCDetector) -> float:
    if det.t_obs is None:
        raise ValueError("detector needs t_obs for windowed scoring")
    return det.t_obs


def _two_block(spec: TrialSpec, lo: int, hi: int, cal: H0Calibration) -> TrialMetrics:
    sc = spec.scenario
    dets = [calibrated_detector(spec, cal, p) for p in spec.p_fa_targets]
    m = TrialMetrics(tuple(spec.p_fa_targets), n_trials=hi - lo)
    for i in range(lo, hi):
        tags, chans, noise = trial_setup(spec, i)
        cap = synthesize(sc.grid, tags, chans, noise, spec.duration)
        ct = dets[0].contrast_trace(cap)
        truths = truth_indices(tags, ct)
        for j, det in enumerate(dets):
            classify_windows(det, ct, truths, m, j, i)
    return m


def run_two_tag(spec: TrialSpec, calibration: H0Calibration | None = None,
                workers: int = 1) -> TrialMetrics:
    """Primary and secondary detections per observation window.

    Windows of ``T_obs`` tile each capture; only windows holding at least
    one true sequence start are scored.  A secondary is present when another
    true start lies within half a window of the primary peak and outside the
    main-lobe exclusion zone.
    """
    if len(spec.scenario.tags) != 2:
        raise ValueError("run_two_tag needs exactly two tags")
    cal = calibration or calibrate_h0(replace(spec, scenario=spec.scenario.without_tags()))
    parts = _run_blocks(_two_block, spec, spec.n_trials, workers, cal)
    return _reduce(parts, spec.p_fa_targets)


# --------------------------------------------------------------------------
# Margin sweep
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class MarginRow:
    margin_db: float
    windows: int
    secondary_present: int
    false_alarms: int
    missed_detections: int

    @property
    def errors(self) -> int:
        return self.false_alarms + self.missed_detections


def _margin_block(spec: TrialSpec, lo: int, hi: int, cal: H0Calibration, margins) -> tuple:
    sc = spec.scenario
    det = calibrated_detector(spec, cal)
    m = TrialMetrics(tuple(spec.p_fa_targets[:1]))
    acc = np.zeros((len(margins), 3), dtype=np.int64)
    for i in range(lo, hi):
        tags, chans, noise = trial_setup(spec, i)
        cap = synthesize(sc.grid, tags, chans, noise, spec.duration)
        ct = det.contrast_trace(cap)
        acc += classify_windows(det, ct, truth_indices(tags, ct), m, 0, i, margins)
    return int(m.windows[0]), acc


def margin_sweep(spec: TrialSpec, margins: Sequence[float], calibration: H0Calibration | None = None,
                 workers: int = 1) -> list[MarginRow]:
    """Secondary false alarms and misses for each margin ``M`` (dB).

    The primary uses the first p_fa target; each window's secondary search
    is repeated with ``s = P0 - G_PSL + M``.
    """
    if len(spec.scenario.tags) != 2:
        raise ValueError("margin_sweep needs a two-tag scenario")
    margins = [float(x) for x in margins]
    if not margins:
        raise ValueError("margins must not be empty")
    cal = calibration or calibrate_h0(replace(spec, scenario=spec.scenario.without_tags()))
    parts = _run_blocks(_margin_block, spec, spec.n_trials, workers, cal, margins)
    windows = sum(p[0] for p in parts)
    acc = sum(p[1] for p in parts)
    return [MarginRow(mg, windows, int(a[0]), int(a[1]), int(a[2])) for mg, a in zip(margins, acc)]


# --------------------------------------------------------------------------
# ROC sweep
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RocRow:
    eta2: float
    p_fa: float
    r_star: float
    p_d_predicted: float
    p_d_observed: float
    n_trials: int


def _path_streams(det: NPCDetector, tb, ts, sigma2: float, n_trials: int):
    """``R_M`` of the noise, cross and signal parts of ``base + a * tag``.

    ``tb`` and ``ts`` are correlator traces of the tag-free and of the
    noise-free unit-tag captures; their rows hold ``n_trials`` trials of K
    subcarriers each.
    """
    k = tb.e0.shape[0] // n_trials
    e_corr = sigma2 * (tb.inv_count_sum(1) - tb.inv_count_sum(0))

    def kmean(x):
        return x.reshape(n_trials, k, -1).mean(axis=1)

    d_n = kmean(np.abs(tb.e1) ** 2 - np.abs(tb.e0) ** 2) - e_corr[None, :]
    d_x = kmean(2 * np.real(np.conj(ts.e1) * tb.e1 - np.conj(ts.e0) * tb.e0))
    d_s = kmean(np.abs(ts.e1) ** 2 - np.abs(ts.e0) ** 2)
    r = np.atleast_2d(det.combined_contrast(np.concatenate([d_n, d_x, d_s], axis=0), tb))
    return r[:n_trials], r[n_trials:2 * n_trials], r[2 * n_trials:]


def _roc_block(spec: TrialSpec, lo: int, hi: int, cal: H0Calibration, eta2_grid, r_stars):
    sc = spec.scenario
    det = calibrated_detector(spec, cal)
    c0 = np.asarray(sc.chans.reflect[0], dtype=complex)
    mag = np.abs(c0)
    unit = np.where(mag > 0, c0 / np.where(mag > 0, mag, 1.0), 1.0)
    bases, keys, firsts = [], [], []
    tag_banks = {}
    for i in range(lo, hi):
        tags, chans, noise = trial_setup(spec, i)
        bases.append(synthesize(sc.grid, (), ChannelCoeffs(gamma=chans.gamma), noise,
                                spec.duration).samples)
        # without phase jitter the noise-free tag capture depends only on the
        # tag timing, so repeated timings reuse one correlator bank
        key = tags if noise.phase_jitter == "none" else (tags, i)
        if key not in tag_banks:
            clean = synthesize(sc.grid, tags, ChannelCoeffs(gamma=0.0, reflect=(unit,)),
                               replace(noise, sigma2=0.0), spec.duration)
            tag_banks[key] = correlator_bank(clean, sc.fsk)
        keys.append(key)
        firsts.append(tags[0])
    times = sc.grid.rs_times(bases[0].shape[1])
    tb = correlator_bank(ResourceGrid(np.concatenate(bases), times, sc.grid), sc.fsk)
    ts = tb.replace(np.concatenate([tag_banks[k].e0 for k in keys]),
                    np.concatenate([tag_banks[k].e1 for k in keys]))
    sigma2 = sc.noise.sigma2 if det.sigma2 is not None else cal.sigma2
    r_n, r_x, r_s = _path_streams(det, tb, ts, sigma2, hi - lo)
    ct_times = tb.times[:r_n.shape[1]]
    eta2_grid = np.asarray(eta2_grid, dtype=float)
    hits = np.zeros((eta2_grid.size, len(r_stars)), dtype=np.int64)
    for b, tag in enumerate(firsts):
        first = tag.sequence_starts(float(ct_times[0]) - TIME_EPS, float(ct_times[-1]) + TIME_EPS)
        if first.size == 0:
            raise ValueError("capture too short to score any sequence start")
        n0 = int(np.searchsorted(ct_times, first[0] - TIME_EPS, side="left"))
        s, x, nz = r_s[b, n0], r_x[b, n0], r_n[b, n0]
        if not s > 0:
            raise ValueError("tag contributes no contrast at its true alignment")
        a = np.sqrt(eta2_grid / s)
        val = nz + a * x + a * a * s
        hits += (val[:, None] > np.asarray(r_stars)[None, :])
    return hits


def roc_sweep(spec: TrialSpec, eta2_grid: Sequence[float], p_fa_grid: Sequence[float],
              calibration: H0Calibration | None = None, workers: int = 1) -> list[RocRow]:
    """Observed and predicted detection probability over ``eta2 x p_fa``.

    The pipeline is linear in each path until the energies are formed, so
    one noise realisation serves every ``eta2``: the contrast at the true
    alignment is ``N + a X + a^2 S`` with the tag amplitude ``a`` set so
    that ``a^2 S = eta2``.
    """
    if len(spec.scenario.tags) != 1:
        raise ValueError("roc_sweep needs exactly one tag")
    eta2_grid = [float(x) for x in eta2_grid]
    p_fa_grid = [float(x) for x in p_fa_grid]
    if not eta2_grid or not p_fa_grid:
        raise ValueError("eta2 and p_fa grids must not be empty")
    if any(e < 0 for e in eta2_grid):
        raise ValueError("eta2 values must be non-negative")
    cal = calibration or calibrate_h0(replace(spec, scenario=spec.scenario.without_tags()))
    r_stars = [cal.threshold(p) for p in p_fa_grid]
    parts = _run_blocks(_roc_block, spec, spec.n_trials, workers, cal, eta2_grid, r_stars)
    hits = sum(parts)
    rows = []
    for a, e in enumerate(eta2_grid):
        for b, p in enumerate(p_fa_grid):
            rows.append(RocRow(e, p, r_stars[b], float(detection_prob(r_stars[b], cal.var_hat, e)),
                               float(hits[a, b]) / spec.n_trials, spec.n_trials))
    return rows


def eta2_for_pd(cal: H0Calibration, p_fa: float, p_d) -> np.ndarray:
    """Path power that the Gaussian model maps to detection probability ``p_d``."""
    p_d = np.atleast_1d(np.asarray(p_d, dtype=float))
    return np.array([cal.threshold(p_fa) - math.sqrt(cal.var_hat) * q_inverse(p) for p in p_d])


# --------------------------------------------------------------------------
# CSV output
# --------------------------------------------------------------------------

def csv_text(header: Sequence[str], rows: Sequence[Sequence]) -> str:
    """RFC-4180 CSV with a header row; floats keep full precision."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, np.integer):
        return int(v)
    return v
