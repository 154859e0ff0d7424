"""Dual-correlator / contrast / Neyman-Pearson receive chain.

Pipeline per subcarrier: two square-wave correlators (one per FSK tone)
evaluated at every RS instant, zero-phase Butterworth smoothing of the
complex outputs, a code-matched contrast, inverse-variance combining over
subcarriers and a Gaussian threshold test.  :class:`NPCDetector` wraps the
chain in an estimator: ``fit`` calibrates on a tag-free capture, ``transform``
returns the combined contrast and ``predict`` reports detected peaks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft as sp_fft
from scipy import signal, special, stats
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .channel import ResourceGrid
from .sequences import TIME_EPS, BitSequence, FskParams, as_bit_sequence, npc25, psl_db, square_wave


class DegenerateWindowError(ValueError):
    """A correlator window has no sample in one of its four half-wave sets."""


# --------------------------------------------------------------------------
# Gaussian tail helpers
# --------------------------------------------------------------------------

def q_function(x):
    """Standard normal tail probability ``Q(x) = erfc(x / sqrt 2) / 2``."""
    out = 0.5 * special.erfc(np.asarray(x, dtype=float) / math.sqrt(2.0))
    return float(out) if np.ndim(out) == 0 else out


def q_inverse(p):
    p = np.asarray(p, dtype=float)
    if np.any((p <= 0) | (p >= 1)):
        raise ValueError("probability must lie in (0, 1)")
    out = math.sqrt(2.0) * special.erfcinv(2.0 * p)
    return float(out) if np.ndim(out) == 0 else out


def np_threshold(var_hat: float, p_fa_target: float) -> float:
    """Threshold giving false-alarm probability ``p_fa_target`` for a
    zero-mean Gaussian statistic of variance ``var_hat``."""
    if var_hat <= 0:
        raise ValueError("var_hat must be positive")
    return math.sqrt(var_hat) * q_inverse(p_fa_target)


def false_alarm_prob(r_star: float, var: float) -> float:
    if var <= 0:
        raise ValueError("var must be positive")
    return q_function(r_star / math.sqrt(var))


def detection_prob(r_star: float, var: float, eta2):
    if var <= 0:
        raise ValueError("var must be positive")
    if np.any(np.asarray(eta2) < 0):
        raise ValueError("eta2 must be non-negative")
    return q_function((r_star - np.asarray(eta2, dtype=float)) / math.sqrt(var))


# --------------------------------------------------------------------------
# Correlators
# --------------------------------------------------------------------------

@dataclass
class CorrelatorOutput:
    e0: complex
    e1: complex
    a0: int
    b0: int
    a1: int
    b1: int

    @property
    def n_samples(self) -> int:
        return self.a0 + self.b0


def _window_signs(rel_times: np.ndarray, fsk: FskParams) -> tuple[np.ndarray, np.ndarray]:
    return square_wave(rel_times, 1.0 / fsk.f0), square_wave(rel_times, 1.0 / fsk.f1)


def _signed_weights(signs: np.ndarray) -> tuple[np.ndarray, int, int]:
    a = int(np.count_nonzero(signs > 0))
    b = int(np.count_nonzero(signs < 0))
    if a == 0 or b == 0:
        raise DegenerateWindowError(f"window has a={a}, b={b} samples; widen it or skip")
    return np.where(signs > 0, 1.0 / a, -1.0 / b), a, b


def correlate_samples(y, times, window_start: float, fsk: FskParams) -> CorrelatorOutput:
    """Correlator outputs for one window over arbitrarily spaced samples.

    Samples with ``window_start <= t < window_start + T_b`` enter the sum;
    the reference square waves start their first half-period at
    ``window_start``.
    """
    y = np.asarray(y)
    times = np.asarray(times, dtype=float)
    rel = times - window_start
    mask = (rel >= -TIME_EPS) & (rel < fsk.bit_duration - TIME_EPS)
    g0, g1 = _window_signs(rel[mask], fsk)
    w0, a0, b0 = _signed_weights(g0)
    w1, a1, b1 = _signed_weights(g1)
    ys = y[..., mask]
    return CorrelatorOutput(e0=ys @ w0, e1=ys @ w1, a0=a0, b0=b0, a1=a1, b1=b1)


def correlate(grid: ResourceGrid, fsk: FskParams, window_start: float, k: int) -> CorrelatorOutput:
    """Correlator outputs of subcarrier ``k`` for the bit window at ``window_start``."""
    if window_start < grid.times[0] - TIME_EPS or window_start + fsk.bit_duration > grid.times[-1] + _last_gap(grid) + TIME_EPS:
        raise ValueError("correlator window extends outside the capture")
    return correlate_samples(grid.samples[k], grid.times, window_start, fsk)


def _last_gap(grid: ResourceGrid) -> float:
    return float(grid.times[-1] - grid.times[-2]) if grid.n_rs > 1 else 0.0


def correlator_noise_var(sigma2: float, a, b):
    """Per-component (real or imaginary) noise variance of a correlator output."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if np.any(a < 1) or np.any(b < 1):
        raise ValueError("sample counts must be >= 1")
    out = 0.5 * sigma2 * (1.0 / a + 1.0 / b)
    return float(out) if out.ndim == 0 else out


@dataclass
class CorrelatorTrace:
    """Correlator outputs at every window start ``n``.

    ``e0``/``e1`` have shape ``(K, N)``; counts have shape ``(N,)`` because
    all subcarriers share the RS timing.
    """

    e0: np.ndarray
    e1: np.ndarray
    a0: np.ndarray
    b0: np.ndarray
    a1: np.ndarray
    b1: np.ndarray
    times: np.ndarray
    sample_rate: float

    @property
    def n_windows(self) -> int:
        return self.e0.shape[1]

    def inv_count_sum(self, bit: int) -> np.ndarray:
        if bit:
            return 1.0 / self.a1 + 1.0 / self.b1
        return 1.0 / self.a0 + 1.0 / self.b0

    def replace(self, e0: np.ndarray, e1: np.ndarray) -> "CorrelatorTrace":
        return CorrelatorTrace(e0, e1, self.a0, self.b0, self.a1, self.b1, self.times, self.sample_rate)


def correlator_bank(grid: ResourceGrid, fsk: FskParams) -> CorrelatorTrace:
    """Both correlators at every RS instant whose bit window fits the capture.

    Regular LTE grids take a fast path: the in-window sampling pattern
    repeats every TTI, so each TTI phase is one sliding correlation.
    Irregular captures fall back to evaluating windows one at a time.
    """
    t = grid.times
    y = grid.samples
    n = grid.n_rs
    tb = fsk.bit_duration
    if t[-1] - t[0] < tb - _last_gap(grid) - TIME_EPS:
        raise ValueError("capture shorter than one bit")

    period = grid.grid.rs_per_tti if grid.grid is not None else None
    if period is not None and _is_periodic(t, period):
        return _bank_periodic(y, t, fsk, period, grid.grid.rs_rate)
    return _bank_generic(y, t, fsk)


def _is_periodic(t: np.ndarray, period: int) -> bool:
    if len(t) <= period:
        return False
    step = t[period:] - t[:-period]
    return bool(np.allclose(step, step[0], rtol=0, atol=1e-9))


def _bank_periodic(y, t, fsk, period, rate) -> CorrelatorTrace:
    n = len(t)
    tb = fsk.bit_duration
    patterns = []
    for p in range(period):
        rel = t[p:] - t[p]
        length = int(np.count_nonzero(rel < tb - TIME_EPS))
        if length == rel.size:
            raise ValueError("capture shorter than one bit window")
        g0, g1 = _window_signs(rel[:length], fsk)
        w0, a0, b0 = _signed_weights(g0)
        w1, a1, b1 = _signed_weights(g1)
        patterns.append((length, w0, w1, (a0, b0, a1, b1)))
    max_len = max(p[0] for p in patterns)
    n_win = n - max_len + 1
    if n_win < 1:
        raise ValueError("capture shorter than one bit window")
    # one forward transform of the capture, one inverse per reference
    nfft = sp_fft.next_fast_len(n + max_len - 1)
    spec = sp_fft.fft(y, nfft, axis=1)
    k = y.shape[0]
    e0 = np.empty((k, n_win), dtype=complex)
    e1 = np.empty((k, n_win), dtype=complex)
    counts = np.empty((4, n_win), dtype=np.int64)
    cache = {}
    for p, (length, w0, w1, cnt) in enumerate(patterns):
        idx = np.arange(p, n_win, period)
        if idx.size == 0:
            continue
        counts[:, idx] = np.asarray(cnt)[:, None]
        # phases with the same in-window pattern (uniform RS spacing) share
        # one sliding correlation
        key = (length, w0.tobytes(), w1.tobytes())
        if key not in cache:
            # correlation with real w == convolution with reversed w
            cache[key] = [sp_fft.ifft(spec * sp_fft.fft(w[::-1], nfft)[None, :], axis=1)
                          for w in (w0, w1)]
        full0, full1 = cache[key]
        e0[:, idx] = full0[:, idx + length - 1]
        e1[:, idx] = full1[:, idx + length - 1]
    return CorrelatorTrace(e0, e1, *counts, times=t[:n_win], sample_rate=rate)


def _bank_generic(y, t, fsk) -> CorrelatorTrace:
    tb = fsk.bit_duration
    last = t[-1] + (t[-1] - t[-2])
    starts = np.nonzero(t + tb <= last + TIME_EPS)[0]
    k = y.shape[0]
    e0 = np.empty((k, starts.size), dtype=complex)
    e1 = np.empty((k, starts.size), dtype=complex)
    counts = np.empty((4, starts.size), dtype=np.int64)
    for j, n in enumerate(starts):
        out = correlate_samples(y, t, t[n], fsk)
        e0[:, j], e1[:, j] = out.e0, out.e1
        counts[:, j] = (out.a0, out.b0, out.a1, out.b1)
    rate = 1.0 / float(np.median(np.diff(t)))
    return CorrelatorTrace(e0, e1, *counts, times=t[starts], sample_rate=rate)


# --------------------------------------------------------------------------
# Smoothing, estimation, contrast
# --------------------------------------------------------------------------

def lowpass(x, cutoff: float, order: int, sample_rate: float, axis: int = -1) -> np.ndarray:
    """Zero-phase Butterworth low-pass; real and imaginary parts filtered separately."""
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    if cutoff >= sample_rate / 2.0:
        raise ValueError(
            f"cutoff {cutoff} Hz must be below the Nyquist frequency {sample_rate / 2.0} Hz"
        )
    sos = signal.butter(order, cutoff, btype="low", fs=sample_rate, output="sos")
    x = np.asarray(x)
    if np.iscomplexobj(x):
        return (signal.sosfiltfilt(sos, x.real, axis=axis)
                + 1j * signal.sosfiltfilt(sos, x.imag, axis=axis))
    return signal.sosfiltfilt(sos, x, axis=axis)


def imbalance_correction(sigma2: float, a_i, b_i, a_j, b_j):
    return sigma2 * (1.0 / np.asarray(a_i) + 1.0 / np.asarray(b_i)
                     - 1.0 / np.asarray(a_j) - 1.0 / np.asarray(b_j))


def path_power_estimate(e_i, e_j, counts, sigma2: float):
    """Unbiased estimate of the reflected path power from one bit window.

    ``counts`` is ``(a_i, b_i, a_j, b_j)`` for the hypothesised bit ``i``
    and its complement ``j``.
    """
    a_i, b_i, a_j, b_j = counts
    if min(np.min(a_i), np.min(b_i), np.min(a_j), np.min(b_j)) < 1:
        raise ValueError("sample counts must be >= 1")
    return np.abs(e_i) ** 2 - np.abs(e_j) ** 2 - imbalance_correction(sigma2, a_i, b_i, a_j, b_j)


def correlator_power(trace: CorrelatorTrace, sigma2: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    """Per-window energies ``|e_0|^2`` and ``|e_1|^2`` with the imbalance
    correction folded into the bit-1 stream, so that their difference is
    the path-power estimate for bit 1."""
    p0 = np.abs(trace.e0) ** 2
    p1 = np.abs(trace.e1) ** 2
    if sigma2:
        p1 = p1 - imbalance_correction(sigma2, trace.a1, trace.b1, trace.a0, trace.b0)[None, :]
    return p0, p1


def contrast_from_power(p0, p1, code: BitSequence, delta_t: int) -> np.ndarray:
    """Code-matched contrast from per-window energy streams (shape ``(K, N)``).

    Bit ``m`` of the code reads the window ``n + m * delta_t`` and adds the
    path-power estimate for the bit it expects, ``p_{b_m} - p_{1-b_m}``.
    """
    code = as_bit_sequence(code)
    nb = code.n_bits
    if delta_t < 1:
        raise ValueError("delta_t must be >= 1")
    d = np.atleast_2d(np.asarray(p1) - np.asarray(p0))
    n_out = d.shape[1] - (nb - 1) * delta_t
    if n_out < 1:
        raise ValueError(
            f"trace of {d.shape[1]} windows too short for {nb} bits at stride {delta_t}"
        )
    s = code.bipolar
    out = np.zeros((d.shape[0], n_out))
    for m in range(nb):
        off = m * delta_t
        out += s[m] * d[:, off:off + n_out]
    return out / nb


def contrast(trace: CorrelatorTrace, code: BitSequence, delta_t: int, sigma2: float = 0.0) -> np.ndarray:
    """Contrast ``R(n, k)`` straight from correlator outputs (no smoothing).

    Returns shape ``(K, N - (N_b - 1) delta_t)``.
    """
    p0, p1 = correlator_power(trace, sigma2)
    return contrast_from_power(p0, p1, code, delta_t)


def combining_weights(trace: CorrelatorTrace, n_bits: int, n_out: int | None = None) -> np.ndarray:
    """``lambda(n) = (1/N_b)(1/a_0 + 1/b_0 + 1/a_1 + 1/b_1)`` at each window."""
    lam = (trace.inv_count_sum(0) + trace.inv_count_sum(1)) / n_bits
    return lam if n_out is None else lam[:n_out]


def combine(r, lam) -> np.ndarray:
    """Multi-subcarrier combiner ``R_M(n) = mean_k R(n,k) / lambda(n,k)``.

    ``lam`` broadcasts against ``r`` of shape ``(K, N)``; a 1-D ``lam`` is
    taken as shared by all subcarriers.
    """
    r = np.atleast_2d(np.asarray(r, dtype=float))
    lam = np.asarray(lam, dtype=float)
    if np.any(lam <= 0):
        raise ValueError("combining weights must be positive")
    if lam.ndim == 1 and lam.shape[0] == r.shape[1]:
        lam = lam[None, :]
    return np.mean(r / lam, axis=0)


# --------------------------------------------------------------------------
# Peak detection
# --------------------------------------------------------------------------

def level_db(value: float) -> float:
    """Contrast level in dB.

    The contrast already estimates a power and its code sidelobes sit at
    ``C(tau) / N_b`` of the peak, so ``20 log10`` keeps the code's PSL and
    the secondary threshold on the same scale.
    """
    if value <= 0:
        return -math.inf
    return 20.0 * math.log10(value)


def db_to_level(db: float) -> float:
    return 10.0 ** (db / 20.0)


@dataclass(frozen=True)
class Peak:
    index: int
    value: float

    @property
    def level_db(self) -> float:
        return level_db(self.value)


def _argmax_first(x: np.ndarray) -> int:
    return int(np.argmax(x))  # numpy returns the lowest index on ties


def detect_primary(r_m, r_star: float, start: int = 0, stop: int | None = None) -> Peak | None:
    """Strongest contrast peak in ``r_m[start:stop]`` if it clears ``r_star``."""
    r_m = np.asarray(r_m, dtype=float)
    stop = len(r_m) if stop is None else min(stop, len(r_m))
    start = max(0, start)
    if stop <= start:
        return None
    i = start + _argmax_first(r_m[start:stop])
    if r_m[i] > r_star:
        return Peak(i, float(r_m[i]))
    return None


def secondary_threshold(p0_db: float, g_psl_db: float, margin_db: float) -> float:
    return p0_db - g_psl_db + margin_db


def detect_secondary(
    r_m,
    primary: Peak,
    r_star: float,
    s_db: float,
    half_window: int,
    exclusion: int,
) -> Peak | None:
    """Largest local maximum within ``half_window`` of the primary peak,
    outside ``+-exclusion`` samples, exceeding both ``r_star`` and ``s_db``."""
    r_m = np.asarray(r_m, dtype=float)
    lo = max(0, primary.index - half_window)
    hi = min(len(r_m), primary.index + half_window + 1)
    seg = r_m[lo:hi].copy()
    rel = np.arange(lo, hi) - primary.index
    seg[np.abs(rel) <= exclusion] = -np.inf
    # only local maxima are candidate peaks; a slope leaving the exclusion
    # zone is not a second tag
    left = np.concatenate(([-np.inf], r_m[lo:hi][:-1]))
    right = np.concatenate((r_m[lo:hi][1:], [-np.inf]))
    if lo > 0:
        left[0] = r_m[lo - 1]
    if hi < len(r_m):
        right[-1] = r_m[hi]
    is_peak = (r_m[lo:hi] >= left) & (r_m[lo:hi] >= right)
    seg[~is_peak] = -np.inf
    if not np.any(np.isfinite(seg)):
        return None
    j = _argmax_first(seg)
    value = float(seg[j])
    floor = max(r_star, db_to_level(s_db))
    if value > floor:
        return Peak(lo + j, value)
    return None


# --------------------------------------------------------------------------
# Reports and the estimator
# --------------------------------------------------------------------------

@dataclass
class ContrastTrace:
    """Per-subcarrier and combined contrast on a common index ``n``."""

    r: np.ndarray
    lam: np.ndarray
    r_m: np.ndarray
    times: np.ndarray
    delta_t: int


@dataclass
class DetectionReport:
    window: tuple[int, int]
    primary: Peak | None
    secondary: Peak | None
    r_star: float
    s_db: float | None
    primary_time: float | None = None
    secondary_time: float | None = None
    labels: dict = field(default_factory=dict)


def check_resource_grid(X) -> ResourceGrid:
    """Accept a :class:`ResourceGrid` or a ``(samples, times)`` pair."""
    if isinstance(X, ResourceGrid):
        grid = X
    elif isinstance(X, tuple) and len(X) == 2:
        grid = ResourceGrid(samples=X[0], times=X[1])
    else:
        raise TypeError(f"expected ResourceGrid or (samples, times), got {type(X).__name__}")
    if not np.all(np.isfinite(grid.samples)):
        raise ValueError("samples contain NaN or inf")
    if grid.n_rs < 2:
        raise ValueError("capture needs at least two RS instants")
    return grid


def estimate_noise_var(grid: ResourceGrid) -> float:
    """Noise variance from differences of the two RS samples of each TTI.

    Both samples share the TTI phase and the direct path, so on a tag-free
    capture their difference is pure noise of variance ``2 sigma^2``.
    """
    per = grid.grid.rs_per_tti if grid.grid is not None else 2
    n = (grid.n_rs // per) * per
    y = grid.samples[:, :n].reshape(grid.n_subcarriers, -1, per)
    diff = y[:, :, 1] - y[:, :, 0]
    return float(np.mean(np.abs(diff) ** 2) / 2.0)


def zero_phase_response(cutoff: float | None, order: int, sample_rate: float, tol: float = 1e-12) -> np.ndarray:
    """Impulse response of ``lowpass`` (symmetric, centred), trimmed at ``tol``."""
    if cutoff is None:
        return np.ones(1)
    n = 1 << 14
    delta = np.zeros(n)
    delta[n // 2] = 1.0
    f = lowpass(delta, cutoff, order, sample_rate)
    keep = np.nonzero(np.abs(f) > tol * np.max(np.abs(f)))[0]
    half = max(n // 2 - keep[0], keep[-1] - n // 2)
    return f[n // 2 - half:n // 2 + half + 1]


def analytic_h0_variance(sigma2: float, fsk: FskParams, sample_rate: float, n_subcarriers: int,
                         code=None, cutoff: float | None = None, order: int = 4) -> float:
    """Exact H0 variance of ``R_M`` deep inside a uniformly sampled capture.

    With no tag the correlator outputs are linear in circular Gaussian
    noise, so ``Cov(|u|^2, |v|^2) = |E[u v*]|^2``.  The power-difference
    stream ``D`` therefore has a closed-form autocovariance, and ``R_M`` is
    a fixed linear filter of ``D`` (low-pass, code taps, combining weight).
    """
    code = npc25() if code is None else as_bit_sequence(code)
    rel = np.arange(int(math.ceil(fsk.bit_duration * sample_rate)) + 1) / sample_rate
    rel = rel[rel < fsk.bit_duration - TIME_EPS]
    g0, g1 = _window_signs(rel, fsk)
    w0, a0, b0 = _signed_weights(g0)
    w1, a1, b1 = _signed_weights(g1)
    length = rel.size
    delta_t = length

    def cross(wa, wb):
        # E[e_a(j) e_b(j + d)^*] / sigma^2 for d = -(L-1) .. L-1
        return np.correlate(wa, wb, mode="full")

    c11, c00, c10, c01 = cross(w1, w1), cross(w0, w0), cross(w1, w0), cross(w0, w1)
    cov_d = sigma2 ** 2 * (c11 ** 2 + c00 ** 2 - c10 ** 2 - c01 ** 2) / n_subcarriers

    lam = (1.0 / a0 + 1.0 / b0 + 1.0 / a1 + 1.0 / b1) / code.n_bits
    taps = np.zeros((code.n_bits - 1) * delta_t + 1)
    taps[::delta_t] = code.bipolar / (code.n_bits * lam)
    h = np.convolve(zero_phase_response(cutoff, order, sample_rate), taps)
    rh = np.correlate(h, h, mode="full")
    mid = rh.size // 2
    lags = np.arange(-(length - 1), length)
    ok = np.abs(lags) <= mid
    return float(np.sum(cov_d[ok] * rh[mid + lags[ok]]))


class NPCDetector(BaseEstimator):
    """Neyman-Pearson tag detector with side-lobe-aware secondary search.

    Parameters
    ----------
    fsk : FskParams
        Tag FSK parameters (tones and bit duration).
    code : BitSequence, optional
        Synchronization code, defaults to the 25-bit NPC.
    p_fa : float
        Target false-alarm probability.
    cutoff, order : float, int
        Butterworth low-pass applied to the correlator streams.
    sigma2 : float, optional
        Noise variance for the imbalance correction; estimated in ``fit``
        when omitted.
    g_psl_db : float, optional
        Code PSL used by the secondary threshold; defaults to ``psl_db(code)``.
    margin_db : float
        Margin added to the secondary threshold.
    t_obs : float, optional
        Observation window (s); ``predict`` splits the capture into windows
        of this length.  Defaults to the whole capture.
    exclusion_bits : float
        Half-width of the main-lobe zone skipped by the secondary search,
        in bit durations.
    var_source : {"empirical", "analytic"}
        How ``fit`` obtains the H0 variance.
    """

    def __init__(self, fsk=None, code=None, p_fa=1e-2, cutoff=100.0, order=4,
                 sigma2=None, g_psl_db=None, margin_db=6.0, t_obs=None,
                 exclusion_bits=1.5, var_source="empirical"):
        self.fsk = fsk
        self.code = code
        self.p_fa = p_fa
        self.cutoff = cutoff
        self.order = order
        self.sigma2 = sigma2
        self.g_psl_db = g_psl_db
        self.margin_db = margin_db
        self.t_obs = t_obs
        self.exclusion_bits = exclusion_bits
        self.var_source = var_source

    # -- helpers -----------------------------------------------------------
    def _code(self) -> BitSequence:
        return npc25() if self.code is None else as_bit_sequence(self.code)

    def _check_params(self):
        if self.fsk is None:
            raise ValueError("fsk parameters are required")
        if not 0 < self.p_fa < 1:
            raise ValueError("p_fa must lie in (0, 1)")
        if self.var_source not in ("empirical", "analytic"):
            raise ValueError("var_source must be 'empirical' or 'analytic'")
        if self.cutoff is not None and self.cutoff <= 0:
            raise ValueError("cutoff must be positive")

    def _sigma2(self) -> float:
        return self.sigma2 if self.sigma2 is not None else getattr(self, "sigma2_", 0.0)

    def correlate(self, X) -> CorrelatorTrace:
        return correlator_bank(check_resource_grid(X), self.fsk)

    def samples_per_bit(self, trace: CorrelatorTrace) -> int:
        return int(trace.a0[0] + trace.b0[0])

    def contrast_trace(self, X, per_subcarrier: bool = False) -> ContrastTrace:
        """Contrast of a capture.

        The combining weight is shared by all subcarriers, so after squaring
        every later stage is linear and the subcarrier average can be taken
        first.  ``per_subcarrier=True`` also keeps ``R(n, k)`` (slower).
        """
        self._check_params()
        code = self._code()
        trace = self.correlate(X)
        delta_t = self.samples_per_bit(trace)
        p0, p1 = correlator_power(trace, self._sigma2())
        n_out = trace.n_windows - (code.n_bits - 1) * delta_t
        lam = combining_weights(trace, code.n_bits, n_out if n_out > 0 else None)
        r = None
        if per_subcarrier:
            r = contrast_from_power(self._smooth(p0, trace), self._smooth(p1, trace), code, delta_t)
        d = np.mean(p1 - p0, axis=0)
        r_m = self.combined_contrast(d, trace)
        return ContrastTrace(r=r, lam=lam, r_m=r_m, times=trace.times[:n_out], delta_t=delta_t)

    def combined_contrast(self, d, trace: CorrelatorTrace) -> np.ndarray:
        """``R_M`` from the subcarrier-averaged power difference ``d``.

        ``d`` is ``mean_k(|e_1|^2 - |e_0|^2)`` with shape ``(N,)`` or a
        batch ``(B, N)`` sharing the timing of ``trace``.
        """
        code = self._code()
        delta_t = self.samples_per_bit(trace)
        d = np.atleast_2d(d)
        d = self._smooth(d, trace)
        r = contrast_from_power(np.zeros_like(d), d, code, delta_t)
        lam = combining_weights(trace, code.n_bits, r.shape[1])
        out = r / lam[None, :]
        return out[0] if out.shape[0] == 1 else out

    def _smooth(self, x, trace: CorrelatorTrace) -> np.ndarray:
        # The references restart at every window, so correlator outputs swing
        # at the tone rate as the window slides by one RS instant; smoothing
        # the energies (not the complex outputs) averages that swing out.
        if self.cutoff is None:
            return x
        return lowpass(x, self.cutoff, self.order, trace.sample_rate)

    # -- estimator API -----------------------------------------------------
    def fit(self, X, y=None):
        """Calibrate the H0 statistics on a capture with no tag."""
        self._check_params()
        grid = check_resource_grid(X)
        self.sigma2_ = estimate_noise_var(grid) if self.sigma2 is None else float(self.sigma2)
        ct = self.contrast_trace(grid)
        r_m = ct.r_m
        self.n_windows_ = r_m.size
        self.mean_ = float(np.mean(r_m))
        self.skewness_ = float(stats.skew(r_m)) if r_m.size > 2 else 0.0
        self.kurtosis_ = float(stats.kurtosis(r_m)) if r_m.size > 3 else 0.0
        if self.var_source == "analytic":
            rate = 1.0 / float(np.median(np.diff(ct.times)))
            self.var_hat_ = analytic_h0_variance(self.sigma2_, self.fsk, rate,
                                                 grid.n_subcarriers, self._code(),
                                                 self.cutoff, self.order)
        else:
            self.var_hat_ = float(np.var(r_m, ddof=1)) if r_m.size > 1 else 0.0
            # rounding residue of an exactly cancelled direct path counts as zero
            scale = max(1.0, float(np.mean(np.abs(grid.samples) ** 2)))
            if self.var_hat_ <= (1e-12 * scale) ** 2:
                self.var_hat_ = 0.0
        if self.var_hat_ <= 0:
            raise ValueError("calibration capture has zero contrast variance")
        return self._set_threshold()

    def set_calibration(self, var_hat: float, sigma2: float):
        """Use H0 statistics obtained elsewhere instead of calling ``fit``."""
        self._check_params()
        if not var_hat > 0:
            raise ValueError("var_hat must be positive")
        self.sigma2_ = float(sigma2) if self.sigma2 is None else float(self.sigma2)
        self.var_hat_ = float(var_hat)
        return self._set_threshold()

    def _set_threshold(self):
        self.r_star_ = np_threshold(self.var_hat_, self.p_fa)
        self.g_psl_db_ = psl_db(self._code()) if self.g_psl_db is None else float(self.g_psl_db)
        return self

    def transform(self, X) -> np.ndarray:
        """Combined contrast ``R_M(n)``."""
        check_is_fitted(self, "r_star_")
        return self.contrast_trace(X).r_m

    def decision_function(self, X) -> np.ndarray:
        return self.transform(X) - self.r_star_

    def predict(self, X) -> list[DetectionReport]:
        """Primary and secondary peaks for each observation window."""
        check_is_fitted(self, "r_star_")
        ct = self.contrast_trace(X)
        return self.detect(ct)

    def detect(self, ct: ContrastTrace) -> list[DetectionReport]:
        check_is_fitted(self, "r_star_")
        r_m = ct.r_m
        rate = 1.0 / float(np.median(np.diff(ct.times))) if ct.times.size > 1 else 1.0
        win = r_m.size if self.t_obs is None else max(1, int(round(self.t_obs * rate)))
        half = win // 2
        excl = int(math.ceil(self.exclusion_bits * ct.delta_t))
        reports = []
        for start in range(0, r_m.size, win):
            stop = min(start + win, r_m.size)
            p = detect_primary(r_m, self.r_star_, start, stop)
            sec, s_db = None, None
            if p is not None:
                s_db = secondary_threshold(p.level_db, self.g_psl_db_, self.margin_db)
                sec = detect_secondary(r_m, p, self.r_star_, s_db, half, excl)
            reports.append(DetectionReport(
                window=(start, stop), primary=p, secondary=sec, r_star=self.r_star_, s_db=s_db,
                primary_time=None if p is None else float(ct.times[p.index]),
                secondary_time=None if sec is None else float(ct.times[sec.index]),
            ))
        return reports
