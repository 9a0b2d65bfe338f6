"""B-format audio to per-frame acoustic features.

Each excitation period becomes one feature frame: a b x 4 log-mel power
matrix (one column per B-format channel W, X, Y, Z) stacked with a b x 3
normalized intensity-vector matrix, giving the b x 7 frame the pose model
consumes. Also hosts the 2-D PCA diagnostic used to visualize how feature
clusters drift with the subject's standing distance.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

EPS_FLOOR = 1e-10

# STFT geometry per excitation period. 512-point frames are the coarsest
# power of two whose bin spacing keeps all 64 mel triangles non-empty at
# 16 kHz; 256 quantizes the low bands onto too few bins.
DEFAULT_N_FFT = 512
DEFAULT_HOP = 256
DEFAULT_BANDS = 64


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MelBank:
    """Triangular mel filterbank evaluated on an rFFT bin grid."""

    weights: np.ndarray  # (b, n_fft//2 + 1)
    centers_hz: np.ndarray  # (b,)
    sample_rate: int
    n_fft: int
    f_lo: float
    f_hi: float

    def __post_init__(self):
        sums = self.weights.sum(axis=1)
        if np.any(self.weights < 0) or np.any(sums <= 0):
            raise ValueError("every filter needs non-negative weights with positive sum")
        if np.any(np.diff(hz_to_mel(self.centers_hz)) <= 0):
            raise ValueError("filter centers must increase on the mel scale")

    @property
    def b(self) -> int:
        return self.weights.shape[0]


def mel_bank(
    b: int = DEFAULT_BANDS,
    n_fft: int = DEFAULT_N_FFT,
    sample_rate: int = 16000,
    f_lo: float = 100.0,
    f_hi: float = 7600.0,
) -> MelBank:
    """Build `b` HTK-mel triangular filters over the rFFT bins of `n_fft`."""
    n_bins = n_fft // 2 + 1
    bin_hz = np.arange(n_bins) * sample_rate / n_fft
    pts = mel_to_hz(np.linspace(hz_to_mel(f_lo), hz_to_mel(f_hi), b + 2))
    w = np.zeros((b, n_bins))
    for j in range(b):
        lo, c, hi = pts[j], pts[j + 1], pts[j + 2]
        w[j] = np.maximum(0.0, np.minimum((bin_hz - lo) / (c - lo), (hi - bin_hz) / (hi - c)))
    return MelBank(w, pts[1:-1].copy(), sample_rate, n_fft, f_lo, f_hi)


def hann(n: int) -> np.ndarray:
    """Periodic Hann window."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft(channel: np.ndarray, n_fft: int = DEFAULT_N_FFT, hop: int = DEFAULT_HOP) -> np.ndarray:
    """Hann-windowed STFT -> complex (frames, n_fft//2 + 1)."""
    if n_fft <= 0 or (n_fft & (n_fft - 1)) != 0:
        raise ValueError("n_fft must be a power of two")
    if hop <= 0 or hop > n_fft:
        raise ValueError("need 0 < hop <= n_fft")
    channel = np.asarray(channel, dtype=np.float64)
    if len(channel) < n_fft:
        raise ValueError("input shorter than n_fft")
    n_frames = 1 + (len(channel) - n_fft) // hop
    win = hann(n_fft)
    frames = np.stack([channel[i * hop : i * hop + n_fft] * win for i in range(n_frames)])
    return np.fft.rfft(frames, axis=1)


def stft_bformat(audio: np.ndarray, n_fft: int = DEFAULT_N_FFT, hop: int = DEFAULT_HOP) -> np.ndarray:
    """STFT of 4-channel (W, X, Y, Z) audio -> (4, frames, bins)."""
    if audio.ndim != 2 or audio.shape[0] != 4:
        raise ValueError("expected (4, samples) B-format audio")
    return np.stack([stft(audio[c], n_fft, hop) for c in range(4)])


def logmel_frame(bformat_stft: np.ndarray, bank: MelBank) -> np.ndarray:
    """Per-channel log-mel of period-mean power -> (b, 4)."""
    if bformat_stft.shape[0] != 4 or bformat_stft.shape[2] != bank.n_fft // 2 + 1:
        raise ValueError("STFT geometry does not match the filterbank")
    power = np.mean(np.abs(bformat_stft) ** 2, axis=1)  # (4, bins)
    return np.log(power @ bank.weights.T + EPS_FLOOR).T  # (b, 4)


def intensity_frame(bformat_stft: np.ndarray, bank: MelBank) -> np.ndarray:
    """Normalized acoustic intensity direction per mel band -> (b, 3).

    Per time-frequency cell I = Re{conj(W) * (X, Y, Z)}, normalized to unit
    length, then averaged with mel weights over bins and uniformly over the
    period's STFT frames. Rows therefore have norm <= 1.
    """
    if bformat_stft.shape[0] != 4 or bformat_stft.shape[2] != bank.n_fft // 2 + 1:
        raise ValueError("STFT geometry does not match the filterbank")
    w = bformat_stft[0]
    xyz = bformat_stft[1:4]  # (3, frames, bins)
    cell = np.real(np.conj(w)[None] * xyz)  # (3, frames, bins)
    norm = np.sqrt(np.sum(cell**2, axis=0))
    unit = cell / (norm + EPS_FLOOR)
    wsum = bank.weights.sum(axis=1)  # (b,)
    banded = np.einsum("bk,cfk->cfb", bank.weights, unit) / wsum[None, None, :]
    return np.mean(banded, axis=1).T  # (b, 3)


@dataclass(frozen=True)
class FeatureFrame:
    """One excitation period's acoustic feature: b x 4 log-mel + b x 3 intensity."""

    logmel: np.ndarray
    intensity: np.ndarray

    def __post_init__(self):
        if self.logmel.ndim != 2 or self.logmel.shape[1] != 4:
            raise ValueError("logmel must be (b, 4)")
        if self.intensity.shape != (self.logmel.shape[0], 3):
            raise ValueError("intensity must be (b, 3) with matching b")

    @property
    def b(self) -> int:
        return self.logmel.shape[0]

    def as_matrix(self) -> np.ndarray:
        """Channel order: [W, X, Y, Z log-mel | x, y, z intensity] -> (b, 7)."""
        return np.concatenate([self.logmel, self.intensity], axis=1)


def assemble(logmel: np.ndarray, intensity: np.ndarray) -> FeatureFrame:
    if logmel.shape[0] != intensity.shape[0]:
        raise ValueError("band count mismatch")
    return FeatureFrame(np.asarray(logmel, dtype=np.float64), np.asarray(intensity, dtype=np.float64))


def disassemble(frame: FeatureFrame) -> tuple[np.ndarray, np.ndarray]:
    return frame.logmel, frame.intensity


def period_features(
    audio_period: np.ndarray,
    bank: MelBank,
    n_fft: int = DEFAULT_N_FFT,
    hop: int = DEFAULT_HOP,
) -> FeatureFrame:
    """Feature frame for one period of 4-channel audio."""
    spec = stft_bformat(audio_period, n_fft, hop)
    return assemble(logmel_frame(spec, bank), intensity_frame(spec, bank))


def pca_project(frames: Sequence[FeatureFrame] | np.ndarray, dims: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Project flattened feature frames onto their top principal axes.

    Power iteration with deflation on the covariance of the mean-centered
    b*7 vectors; returns (points (N, dims), explained_variance (dims,)) with
    variances in decreasing order. The start vector is fixed, and each axis
    sign is pinned by its largest-magnitude entry, so output is reproducible.
    """
    if isinstance(frames, np.ndarray):
        x = np.asarray(frames, dtype=np.float64)
    else:
        x = np.stack([f.as_matrix().ravel() for f in frames]).astype(np.float64)
    n, d = x.shape
    if n < dims:
        raise ValueError("need at least `dims` frames")
    xc = x - x.mean(axis=0)
    cov = xc.T @ xc / n
    total_var = np.trace(cov)
    if total_var <= 1e-12:
        raise ValueError("zero-variance input")
    rng = np.random.default_rng(12345)
    axes = np.zeros((dims, d))
    variances = np.zeros(dims)
    for i in range(dims):
        v = rng.standard_normal(d)
        v /= np.linalg.norm(v)
        for _ in range(1000):
            nxt = cov @ v
            nn = np.linalg.norm(nxt)
            if nn <= 1e-300:
                break
            nxt /= nn
            if np.linalg.norm(nxt - v) < 1e-10:
                v = nxt
                break
            v = nxt
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        lam = float(v @ cov @ v)
        axes[i] = v
        variances[i] = lam
        cov = cov - lam * np.outer(v, v)
    return xc @ axes.T, variances
