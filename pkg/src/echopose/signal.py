"""Periodic swept-sine excitation and delay primitives.

The probe signal is one period of a logarithmic (exponential) swept sine,
played on endless repeat by the loudspeaker. Everything downstream is framed
in units of this period, so this module also carries the two re-timing
primitives the rest of the pipeline needs: dropping a whole-sample prefix
from a recorded stream (phase shifting) and delaying a buffer by a fractional
number of samples (path rendering).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TspSignal:
    """One period of the repeating swept-sine probe."""

    samples: np.ndarray
    sample_rate: int
    period_len: int
    f_lo: float
    f_hi: float

    def __post_init__(self):
        if self.period_len <= 0:
            raise ValueError("period_len must be positive")
        if self.samples.shape != (self.period_len,):
            raise ValueError("samples must hold exactly one period")
        if not 0.0 < self.f_lo < self.f_hi:
            raise ValueError("need 0 < f_lo < f_hi")
        if self.f_hi >= self.sample_rate / 2:
            raise ValueError("f_hi must stay below Nyquist")
        if np.max(np.abs(self.samples)) > 1.0 + 1e-12:
            raise ValueError("amplitude exceeds 1")

    @property
    def frame_rate(self) -> float:
        """Pose/feature frames per second (one frame per period)."""
        return self.sample_rate / self.period_len


def generate_tsp(sample_rate: int, period_len: int, f_lo: float, f_hi: float) -> TspSignal:
    """Generate one period of a logarithmic swept sine from f_lo to f_hi.

    x(t) = sin(2*pi*f_lo*L*(exp(t/L) - 1)) with L = T/ln(f_hi/f_lo), so the
    instantaneous frequency rises exponentially from f_lo at t=0 toward f_hi
    at t=T. Deterministic: same arguments give bit-identical output.
    """
    if period_len <= 0:
        raise ValueError("period_len must be positive")
    if not 0.0 < f_lo < f_hi:
        raise ValueError("need 0 < f_lo < f_hi")
    if f_hi >= sample_rate / 2:
        raise ValueError("f_hi must stay below Nyquist")
    duration = period_len / sample_rate
    rate = np.log(f_hi / f_lo) / duration
    t = np.arange(period_len, dtype=np.float64) / sample_rate
    phase = 2.0 * np.pi * f_lo / rate * (np.exp(rate * t) - 1.0)
    return TspSignal(np.sin(phase), sample_rate, period_len, f_lo, f_hi)


def phase_shift_stream(stream: np.ndarray, alpha: int, period_len: int) -> np.ndarray:
    """Drop the first `alpha` samples so subsequent framing starts mid-period.

    `alpha` is a whole-sample offset in [0, period_len]; the remaining stream
    must still hold at least one full frame.
    """
    alpha = int(alpha)
    if alpha < 0 or alpha > period_len:
        raise ValueError(f"alpha {alpha} out of range [0, {period_len}]")
    if len(stream) - alpha < period_len:
        raise ValueError("stream too short for one frame after the shift")
    return stream[alpha:]


def fractional_delay(buffer: np.ndarray, delay: float) -> np.ndarray:
    """Delay a buffer by a non-negative real number of samples.

    Linear interpolation between neighbouring samples; the leading region is
    zero-filled and the output keeps the input length. Delays beyond the
    buffer length therefore give an all-zero result.
    """
    if delay < 0:
        raise ValueError("delay must be non-negative")
    n = len(buffer)
    out = np.zeros(n, dtype=np.float64)
    d0 = int(np.floor(delay))
    frac = delay - d0
    if d0 < n:
        out[d0:] += (1.0 - frac) * buffer[: n - d0]
    if d0 + 1 < n:
        out[d0 + 1 :] += frac * buffer[: n - d0 - 1]
    return out


def circular_delay(period: np.ndarray, delay: float) -> np.ndarray:
    """One period of the endlessly repeating signal delayed by `delay` samples.

    A fractional delay of a periodic stream is a circular fractional shift of
    its period; this is what path rendering applies per frame, since frames
    are aligned to period boundaries.
    """
    n = len(period)
    x = np.arange(n, dtype=np.float64) - delay
    x0 = np.floor(x).astype(np.int64)
    frac = x - x0
    return (1.0 - frac) * period[x0 % n] + frac * period[(x0 + 1) % n]
