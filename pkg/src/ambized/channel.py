"""LTE reference-signal timing and received-signal synthesis for 0..N tags.

The receiver only observes the cell-specific reference signals: two OFDM
symbols per TTI on ``K = 4 N_RB`` subcarriers.  All subcarriers share the
same RS timing, so a :class:`ResourceGrid` stores one time vector.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .sequences import BitSequence, FskParams, npc25, reflection_states

PHASE_JITTER_MODES = ("none", "walk", "iid")


@dataclass(frozen=True)
class GridParams:
    n_rb: int = 6
    t_ofdm: float = 71.35e-6
    symbols_per_tti: int = 14
    rs_symbol_indices: tuple[int, ...] = (0, 7)
    pilot_power: float = 1.0

    def __post_init__(self):
        if self.n_rb < 1:
            raise ValueError("n_rb must be >= 1")
        if self.t_ofdm <= 0:
            raise ValueError("t_ofdm must be positive")
        idx = tuple(int(i) for i in self.rs_symbol_indices)
        if len(idx) != 2:
            raise ValueError("exactly two RS symbols per TTI are supported")
        if list(idx) != sorted(set(idx)) or idx[0] < 0 or idx[-1] >= self.symbols_per_tti:
            raise ValueError(f"bad rs_symbol_indices {self.rs_symbol_indices!r}")
        if self.pilot_power <= 0:
            raise ValueError("pilot_power must be positive")
        object.__setattr__(self, "rs_symbol_indices", idx)

    @property
    def n_subcarriers(self) -> int:
        return 4 * self.n_rb

    @property
    def tti(self) -> float:
        return self.symbols_per_tti * self.t_ofdm

    @property
    def rs_per_tti(self) -> int:
        return len(self.rs_symbol_indices)

    @property
    def rs_rate(self) -> float:
        """Mean RS sampling rate in Hz."""
        return self.rs_per_tti / self.tti

    def n_rs(self, duration: float) -> int:
        """Number of RS instants with ``t < duration``."""
        n_tti = int(math.ceil(duration / self.tti)) + 1
        t = self.rs_times(n_tti * self.rs_per_tti)
        return int(np.count_nonzero(t < duration - 1e-12))

    def rs_times(self, n: int) -> np.ndarray:
        return rs_time(self, np.arange(n))


def rs_time(grid: GridParams, l):
    """Time (s) of RS index ``l``; identical for every subcarrier."""
    l = np.asarray(l)
    if np.any(l < 0):
        raise ValueError("RS index must be non-negative")
    per = grid.rs_per_tti
    offs = np.asarray(grid.rs_symbol_indices)[l % per]
    t = (l // per) * grid.tti + offs * grid.t_ofdm
    return float(t) if t.ndim == 0 else t


def bits_fit_grid(fsk: FskParams, grid: GridParams, rtol: float = 1e-6) -> bool:
    n = fsk.bit_duration / grid.tti
    return abs(n - round(n)) <= rtol * max(1.0, n) and round(n) >= 1


@dataclass(frozen=True)
class ZedConfig:
    """One tag: code, FSK tones, idle time and cycle phase.

    The tag repeats ``wait`` seconds of silence followed by one code
    transmission.  ``start_offset`` is where its cycle starts on the
    receiver clock, so its sequences begin at
    ``start_offset + wait + j * cycle``.
    """

    code: BitSequence
    fsk: FskParams
    wait: float
    start_offset: float = 0.0

    def __post_init__(self):
        if self.wait < 0:
            raise ValueError("wait must be non-negative")

    @property
    def seq_duration(self) -> float:
        return self.code.n_bits * self.fsk.bit_duration

    @property
    def cycle(self) -> float:
        return self.seq_duration + self.wait

    def is_active(self, t) -> np.ndarray:
        tau = np.mod(np.asarray(t, dtype=float) - self.start_offset, self.cycle)
        return tau >= self.wait - 1e-12

    def modulation(self, t) -> np.ndarray:
        """Reflection state (+1/-1, 0 while waiting) at receiver times ``t``."""
        tau = np.mod(np.asarray(t, dtype=float) - self.start_offset, self.cycle)
        return reflection_states(self.code, self.fsk, tau - self.wait)

    def sequence_starts(self, t_begin: float, t_end: float) -> np.ndarray:
        """Receiver times of sequence starts in ``[t_begin, t_end)``."""
        first = self.start_offset + self.wait
        j0 = math.ceil((t_begin - first) / self.cycle - 1e-12)
        j1 = math.ceil((t_end - first) / self.cycle - 1e-12)
        return first + self.cycle * np.arange(j0, j1)


@dataclass(frozen=True)
class ChannelCoeffs:
    """Direct path ``gamma`` and one reflected path per tag.

    Each entry is a complex scalar (frequency-flat) or a length-K array.
    """

    gamma: complex | np.ndarray = 1.0
    reflect: tuple = ()

    def direct(self, n_sub: int) -> np.ndarray:
        return _per_subcarrier(self.gamma, n_sub, "gamma")

    def tag(self, i: int, n_sub: int) -> np.ndarray:
        return _per_subcarrier(self.reflect[i], n_sub, f"reflect[{i}]")


def _per_subcarrier(value, n_sub: int, name: str) -> np.ndarray:
    arr = np.asarray(value, dtype=complex)
    if arr.ndim == 0:
        return np.full(n_sub, complex(arr))
    if arr.shape != (n_sub,):
        raise ValueError(f"{name} must be scalar or length {n_sub}, got shape {arr.shape}")
    return arr


@dataclass(frozen=True)
class NoiseModel:
    """Complex AWGN plus a per-TTI common phase.

    ``phase_jitter`` is ``"none"`` (phase 0), ``"walk"`` (uniform initial
    phase, then a Gaussian random walk with ``phase_step`` rad std per TTI)
    or ``"iid"`` (independent uniform phase every TTI).
    """

    sigma2: float
    phase_jitter: str = "none"
    phase_step: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.sigma2 < 0:
            raise ValueError("sigma2 must be non-negative")
        if self.phase_jitter not in PHASE_JITTER_MODES:
            raise ValueError(
                f"phase_jitter must be one of {PHASE_JITTER_MODES}, got {self.phase_jitter!r}"
            )
        if self.phase_step < 0:
            raise ValueError("phase_step must be non-negative")


@dataclass
class ResourceGrid:
    """Received RS samples ``samples[k, l]`` observed at ``times[l]``."""

    samples: np.ndarray
    times: np.ndarray
    grid: GridParams | None = None
    phases: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=complex))
        self.times = np.asarray(self.times, dtype=float)
        if self.samples.shape[1] != self.times.shape[0]:
            raise ValueError("samples and times disagree on the number of RS instants")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("times must be strictly increasing")

    @property
    def n_subcarriers(self) -> int:
        return self.samples.shape[0]

    @property
    def n_rs(self) -> int:
        return self.samples.shape[1]

    def time_map(self, k: int, l: int) -> float:
        if not 0 <= k < self.n_subcarriers:
            raise IndexError(k)
        return float(self.times[l])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["k", "l", "t_seconds", "re", "im"])
            for k in range(self.n_subcarriers):
                for l in range(self.n_rs):
                    v = self.samples[k, l]
                    w.writerow([k, l, repr(float(self.times[l])), repr(float(v.real)), repr(float(v.imag))])


def draw_phases(noise: NoiseModel, n_tti: int, rng: np.random.Generator) -> np.ndarray:
    if noise.phase_jitter == "none":
        return np.zeros(n_tti)
    if noise.phase_jitter == "iid":
        return rng.uniform(0.0, 2 * np.pi, n_tti)
    start = rng.uniform(0.0, 2 * np.pi)
    steps = rng.normal(0.0, noise.phase_step, n_tti)
    steps[0] = 0.0
    return start + np.cumsum(steps)


def synthesize(
    grid: GridParams,
    tags: Sequence[ZedConfig],
    chans: ChannelCoeffs,
    noise: NoiseModel,
    duration: float,
) -> ResourceGrid:
    """Received RS grid for the given tags over ``[0, duration)``.

    ``y(k,l) = exp(j phi) sqrt(P_u) [Gamma(k) + sum_tags c_tag(k) x_tag(t_l)] + alpha``
    with ``x_tag`` in {+1, -1} while the tag transmits and 0 while it waits.

    Random draws (phases, then noise) do not depend on the tag list, so two
    calls that differ only in tags share the same noise realisation.
    """
    tags = list(tags)
    if len(chans.reflect) != len(tags):
        raise ValueError(
            f"{len(tags)} tag(s) but {len(chans.reflect)} reflected path(s) in channel"
        )
    for i, tag in enumerate(tags):
        if duration < tag.cycle - 1e-12:
            raise ValueError(
                f"duration {duration} s is shorter than tag {i} cycle {tag.cycle} s"
            )
        if not bits_fit_grid(tag.fsk, grid):
            raise ValueError(
                f"tag {i}: bit_duration {tag.fsk.bit_duration} s is not an integer "
                f"number of TTIs ({grid.tti} s)"
            )
    if duration <= 0:
        raise ValueError("duration must be positive")

    n_sub = grid.n_subcarriers
    n = grid.n_rs(duration)
    times = grid.rs_times(n)
    tti_idx = (np.arange(n) // grid.rs_per_tti)
    n_tti = int(tti_idx[-1]) + 1

    rng = np.random.default_rng(noise.seed)
    phases = draw_phases(noise, n_tti, rng)

    body = chans.direct(n_sub)[:, None]
    for i, tag in enumerate(tags):
        x = tag.modulation(times).astype(float)
        body = body + chans.tag(i, n_sub)[:, None] * x[None, :]
    rot = np.sqrt(grid.pilot_power) * np.exp(1j * phases[tti_idx])
    samples = np.empty((n_sub, n), dtype=complex)
    np.multiply(rot[None, :], body, out=samples)
    if noise.sigma2 > 0:
        # interleaved (re, im) normals viewed as complex, no extra copy
        z = rng.standard_normal((n_sub, 2 * n)).view(complex)
        z *= np.sqrt(noise.sigma2 / 2.0)
        samples += z
    return ResourceGrid(samples=samples, times=times, grid=grid, phases=phases[tti_idx])


@dataclass(frozen=True)
class ReferenceScenario:
    """Experiment constants and ready-to-use templates.

    The nominal values are kept verbatim; ``fsk`` snaps the bit duration to
    an integer number of TTIs (32) with the tones rescaled to keep 4 and 16
    periods per bit.
    """

    bandwidth: float = 2.5e6
    fft_size: int = 128
    cp_len: int = 8
    t_ofdm: float = 71.35e-6
    f0: float = 125.0
    f1: float = 500.0
    t_seq: float = 0.8
    t_a: float = 1.4
    t_b: float = 2.2
    g_psl_db: float = 21.93
    margin_db: float = 6.0
    lpf_cutoff: float = 100.0
    lpf_order: int = 4
    p_fa_targets: tuple[float, ...] = (1e-2, 1e-3, 1e-7)
    grid: GridParams = field(default_factory=GridParams)
    fsk: FskParams | None = None
    tag_a: ZedConfig | None = None
    tag_b: ZedConfig | None = None

    @property
    def t_wait_a(self) -> float:
        return self.t_a - self.t_seq

    @property
    def t_wait_b(self) -> float:
        return self.t_b - self.t_seq

    @property
    def t_obs(self) -> float:
        return min(self.t_a, self.t_b)


def snap_fsk(grid: GridParams, f0: float, f1: float, bit_duration: float) -> FskParams:
    """FSK parameters with T_b rounded to whole TTIs and tones rounded to
    whole periods per bit."""
    n_tti = max(1, round(bit_duration / grid.tti))
    tb = n_tti * grid.tti
    p0 = max(1, round(f0 * bit_duration))
    p1 = max(1, round(f1 * bit_duration))
    return FskParams(f0=p0 / tb, f1=p1 / tb, bit_duration=tb)


def paper_scenario_params() -> ReferenceScenario:
    code = npc25()
    grid = GridParams(t_ofdm=71.35e-6)
    nominal = ReferenceScenario()
    fsk = snap_fsk(grid, nominal.f0, nominal.f1, nominal.t_seq / code.n_bits)
    seq = code.n_bits * fsk.bit_duration
    tag_a = ZedConfig(code=code, fsk=fsk, wait=nominal.t_a - seq)
    tag_b = ZedConfig(code=code, fsk=fsk, wait=nominal.t_b - seq)
    return ReferenceScenario(grid=grid, fsk=fsk, tag_a=tag_a, tag_b=tag_b)
