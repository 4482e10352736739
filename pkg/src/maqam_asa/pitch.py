"""Fundamental-frequency tracking and histogram-based tonic detection.

The tracker is a YIN-style cumulative-mean-normalized autocorrelation
estimator tuned for monophonic voice (50-1000 Hz, dip threshold 0.15,
parabolic refinement). Tonic detection folds voiced frames into a 120-bin
(10-cent) octave histogram and picks the smoothed peak.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import AudioClip
from .errors import EmptyHistogramError

FRAME_SIZE = 1024
PITCH_HOP = 512
F_MIN = 50.0
F_MAX = 1000.0
YIN_THRESHOLD = 0.15
VOICING_CONFIDENCE = 0.5
CENTS_PER_BIN = 10
N_BINS = 1200 // CENTS_PER_BIN


@dataclass(frozen=True)
class F0Frame:
    time: float
    f0: float | None
    confidence: float


@dataclass(frozen=True)
class F0Track:
    frames: tuple[F0Frame, ...]
    hop: float

    def voiced(self) -> np.ndarray:
        return np.array([f.f0 for f in self.frames if f.f0 is not None])

    def transposed(self, cents: float) -> "F0Track":
        factor = 2.0 ** (cents / 1200.0)
        return F0Track(
            frames=tuple(
                F0Frame(f.time, None if f.f0 is None else f.f0 * factor, f.confidence)
                for f in self.frames
            ),
            hop=self.hop,
        )


@dataclass(frozen=True)
class PitchHistogram:
    """Counts over one octave of pitch classes at 10-cent resolution."""

    bins: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "bins", np.asarray(self.bins, dtype=np.float64))
        if self.bins.shape != (N_BINS,):
            raise ValueError(f"expected {N_BINS} bins")

    @property
    def total(self) -> float:
        return float(self.bins.sum())


def _cmndf(frames: np.ndarray, tau_max: int, window: int) -> np.ndarray:
    """Cumulative-mean-normalized difference per frame, shape (N, tau_max+1)."""
    n_frames = frames.shape[0]
    span = window + tau_max
    fft_len = 1 << int(np.ceil(np.log2(2 * span)))
    spec_full = np.fft.rfft(frames, fft_len, axis=1)
    spec_head = np.fft.rfft(frames[:, :window], fft_len, axis=1)
    corr = np.fft.irfft(spec_full * np.conj(spec_head), fft_len, axis=1)[:, : tau_max + 1]

    sq = frames ** 2
    cum = np.concatenate([np.zeros((n_frames, 1)), np.cumsum(sq, axis=1)], axis=1)
    energy_head = cum[:, window] - cum[:, 0]
    energy_lag = cum[:, window : window + tau_max + 1] - cum[:, : tau_max + 1]
    diff = energy_head[:, None] + energy_lag - 2.0 * corr
    diff = np.maximum(diff, 0.0)

    cumdiff = np.cumsum(diff[:, 1:], axis=1)
    taus = np.arange(1, tau_max + 1, dtype=np.float64)
    out = np.ones((n_frames, tau_max + 1))
    with np.errstate(divide="ignore", invalid="ignore"):
        norm = diff[:, 1:] * taus / cumdiff
    out[:, 1:] = np.where(cumdiff > 0, norm, 1.0)
    return out


def _pick_dip(d: np.ndarray, tau_min: int, tau_max: int) -> tuple[float, float]:
    """First-below-threshold dip (walked to its local minimum), else argmin."""
    region = d[tau_min : tau_max + 1]
    below = region < YIN_THRESHOLD
    if below.any():
        tau = tau_min + int(np.argmax(below))
        while tau + 1 <= tau_max and d[tau + 1] < d[tau]:
            tau += 1
    else:
        tau = tau_min + int(np.argmin(region))
    # parabolic refinement over the difference dip
    if tau_min < tau < tau_max:
        a, b, c = d[tau - 1], d[tau], d[tau + 1]
        denom = a - 2.0 * b + c
        shift = 0.5 * (a - c) / denom if abs(denom) > 1e-12 else 0.0
        shift = float(np.clip(shift, -0.5, 0.5))
    else:
        shift = 0.0
    return tau + shift, float(d[tau])


def track_f0(clip: AudioClip) -> F0Track:
    """YIN-style f0 per 512-sample hop; low-confidence frames are unvoiced."""
    sr = clip.sample_rate
    samples = np.asarray(clip.samples, dtype=np.float64)
    tau_min = max(2, int(sr / F_MAX))
    tau_max = int(np.ceil(sr / F_MIN))
    span = FRAME_SIZE + tau_max
    if samples.size < span:
        return F0Track(frames=(), hop=PITCH_HOP / sr)

    n_frames = (samples.size - span) // PITCH_HOP + 1
    starts = np.arange(n_frames) * PITCH_HOP
    windows = np.lib.stride_tricks.sliding_window_view(samples, span)[::PITCH_HOP][:n_frames]
    d = _cmndf(windows, tau_max, FRAME_SIZE)

    frames = []
    for i in range(n_frames):
        tau, dip = _pick_dip(d[i], tau_min, tau_max)
        confidence = float(np.clip(1.0 - dip, 0.0, 1.0))
        f0 = sr / tau
        time = (starts[i] + FRAME_SIZE / 2) / sr
        if confidence >= VOICING_CONFIDENCE and F_MIN <= f0 <= F_MAX:
            frames.append(F0Frame(time=time, f0=float(f0), confidence=confidence))
        else:
            frames.append(F0Frame(time=time, f0=None, confidence=confidence))
    return F0Track(frames=tuple(frames), hop=PITCH_HOP / sr)


def fold_histogram(track: F0Track, ref_hz: float) -> PitchHistogram:
    """Bin voiced frames by pitch class relative to ref_hz (octave-folded)."""
    if ref_hz <= 0:
        raise ValueError("ref_hz must be positive")
    bins = np.zeros(N_BINS)
    voiced = track.voiced()
    if voiced.size:
        cents = (1200.0 * np.log2(voiced / ref_hz)) % 1200.0
        idx = (cents // CENTS_PER_BIN).astype(int) % N_BINS
        np.add.at(bins, idx, 1.0)
    return PitchHistogram(bins=bins)


def detect_tonic(histogram: PitchHistogram, ref_hz: float) -> float:
    """Center of the smoothed peak bin, as a frequency near ref_hz.

    Smoothing is a circular 3-bin moving average; ties resolve to the lower
    bin index.
    """
    if histogram.total <= 0:
        raise EmptyHistogramError("histogram holds no voiced frames")
    b = histogram.bins
    smooth = (np.roll(b, 1) + b + np.roll(b, -1)) / 3.0
    peak = int(np.argmax(smooth))
    cents = peak * CENTS_PER_BIN + CENTS_PER_BIN / 2.0
    if cents > 600.0:  # pitch class is circular; stay within half an octave of ref
        cents -= 1200.0
    return ref_hz * 2.0 ** (cents / 1200.0)


def tonic_confidence(histogram: PitchHistogram) -> float:
    """Fraction of voiced mass in the highest-mass bin."""
    if histogram.total <= 0:
        return 0.0
    return float(histogram.bins.max() / histogram.total)


def estimate_tonic(clip: AudioClip) -> tuple[float, float]:
    """(tonic_hz, confidence) for a clip, seeding the fold at the median f0."""
    track = track_f0(clip)
    voiced = track.voiced()
    if voiced.size == 0:
        raise EmptyHistogramError("no voiced frames in clip")
    ref = float(np.median(voiced))
    hist = fold_histogram(track, ref)
    return detect_tonic(hist, ref), tonic_confidence(hist)
