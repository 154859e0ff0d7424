"""Binary synchronization codes, FSK chip waveforms and autocorrelation analysis."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

# Slack (seconds) absorbing float error when a sample sits on a bit or
# half-period boundary.
TIME_EPS = 1e-9

_NPC25 = (0, 1, 1, 0, 1, 1, 0, 1, 0, 1, 0, 1, 1, 1, 1, 1, 1, 0, 0, 0, 1, 1, 0, 0, 0)
_BARKER13 = (1, 1, 1, 1, 1, 0, 0, 1, 1, 0, 1, 0, 1)


@dataclass(frozen=True)
class BitSequence:
    """Immutable binary code. ``bits`` holds 0/1 values in transmission order."""

    bits: tuple[int, ...]

    def __post_init__(self):
        bits = tuple(int(b) for b in self.bits)
        if len(bits) < 1:
            raise ValueError("a bit sequence needs at least one bit")
        if any(b not in (0, 1) for b in bits):
            raise ValueError(f"bits must be 0 or 1, got {self.bits!r}")
        object.__setattr__(self, "bits", bits)

    def __len__(self) -> int:
        return len(self.bits)

    def __iter__(self):
        return iter(self.bits)

    def __getitem__(self, idx):
        return self.bits[idx]

    @property
    def n_bits(self) -> int:
        return len(self.bits)

    @property
    def bipolar(self) -> np.ndarray:
        """Bit b mapped to 2b - 1."""
        return 2 * np.asarray(self.bits, dtype=np.int64) - 1

    def to_string(self) -> str:
        return ",".join(str(b) for b in self.bits)

    @classmethod
    def from_string(cls, text: str) -> "BitSequence":
        """Parse ``"0,1,1,0"`` (whitespace tolerated)."""
        parts = [p.strip() for p in text.split(",") if p.strip()]
        try:
            return cls(tuple(int(p) for p in parts))
        except ValueError as exc:
            raise ValueError(f"invalid bit string {text!r}: {exc}") from None


def npc25() -> BitSequence:
    """The 25-bit near-perfect code (peak 25, largest sidelobe 2)."""
    return BitSequence(_NPC25)


def barker13() -> BitSequence:
    return BitSequence(_BARKER13)


def as_bit_sequence(code: BitSequence | Iterable[int] | str) -> BitSequence:
    if isinstance(code, BitSequence):
        return code
    if isinstance(code, str):
        return BitSequence.from_string(code)
    return BitSequence(tuple(code))


def aperiodic_autocorrelation(seq: BitSequence | Sequence[int]) -> np.ndarray:
    """Aperiodic autocorrelation of the bipolar code for lags 0..N_b-1.

    Returns an integer array; entry 0 is always N_b.
    """
    s = as_bit_sequence(seq).bipolar
    full = np.correlate(s, s, mode="full")
    return full[len(s) - 1:].astype(np.int64)


def psl_db(seq: BitSequence | Sequence[int]) -> float:
    """Peak-to-sidelobe level, ``20 log10(N_b / max |sidelobe|)``.

    A code whose sidelobes all vanish (only possible for N_b == 1 here)
    is reported as ``inf``.
    """
    acf = aperiodic_autocorrelation(seq)
    peak = acf[0]
    side = np.max(np.abs(acf[1:])) if len(acf) > 1 else 0
    if side == 0:
        return math.inf
    return 20.0 * math.log10(peak / side)


@dataclass(frozen=True)
class FskParams:
    """Two-tone square-wave FSK used by the tag for each bit.

    Attributes:
        f0: tone for bit 0, Hz.
        f1: tone for bit 1, Hz.
        bit_duration: T_b in seconds.
        chips_per_bit: N_c; the chip duration is ``bit_duration / chips_per_bit``.
    """

    f0: float
    f1: float
    bit_duration: float
    chips_per_bit: int = 1

    def __post_init__(self):
        if self.f0 <= 0 or self.f1 <= 0:
            raise ValueError("FSK tones must be positive")
        if self.f0 == self.f1:
            raise ValueError("FSK tones must differ")
        if self.bit_duration <= 0:
            raise ValueError("bit_duration must be positive")
        if self.chips_per_bit < 1:
            raise ValueError("chips_per_bit must be >= 1")
        for name, f in (("f0", self.f0), ("f1", self.f1)):
            periods = f * self.bit_duration
            if abs(periods - round(periods)) > 1e-6 * max(1.0, periods):
                raise ValueError(
                    f"{name}={f} Hz does not fit an integer number of periods "
                    f"in bit_duration={self.bit_duration} s ({periods:.6f})"
                )

    @property
    def chip_duration(self) -> float:
        return self.bit_duration / self.chips_per_bit

    def tone(self, bit: int) -> float:
        return self.f1 if bit else self.f0

    def period(self, bit: int) -> float:
        return 1.0 / self.tone(bit)


def square_wave(phase_time, period: float) -> np.ndarray:
    """50% duty square wave: +1 on the first half of each period, -1 after.

    ``phase_time`` is measured from the start of a period (bit boundary).
    """
    frac = np.mod(np.asarray(phase_time, dtype=float) + TIME_EPS, period)
    return np.where(frac < period / 2.0, 1, -1).astype(np.int8)


def reflection_states(code: BitSequence, fsk: FskParams, t) -> np.ndarray:
    """Vectorized tag modulation state at sequence-relative times ``t``.

    Times inside ``[0, N_b T_b)`` yield +1/-1 following the tone of the
    current bit (phase restarted at each bit boundary); all other times
    yield 0 (tag idle).
    """
    t = np.asarray(t, dtype=float)
    tb = fsk.bit_duration
    bit_idx = np.floor((t + TIME_EPS) / tb).astype(np.int64)
    active = (bit_idx >= 0) & (bit_idx < code.n_bits)
    bits = np.asarray(code.bits, dtype=np.int64)
    safe_idx = np.clip(bit_idx, 0, code.n_bits - 1)
    b = bits[safe_idx]
    within = t - safe_idx * tb
    periods = np.where(b == 1, 1.0 / fsk.f1, 1.0 / fsk.f0)
    frac = np.mod(within + TIME_EPS, periods)
    state = np.where(frac < periods / 2.0, 1, -1)
    return np.where(active, state, 0).astype(np.int8)


def reflection_state(code: BitSequence, fsk: FskParams, t: float) -> int:
    """Scalar form of :func:`reflection_states`."""
    return int(reflection_states(code, fsk, np.array([t]))[0])
