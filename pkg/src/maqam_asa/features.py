"""Log-mel spectrogram front end: 1024 FFT, 512 hop, 128 mel bands.

Frames follow the center convention (reflect padding of n_fft/2), so a signal
of n samples yields 1 + floor(n / hop) frames. Decibel values reference the
clip's own maximum mel power, floored at 1e-10.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio_io import AudioClip
from .errors import DegenerateStatsError, EmptyInputError, InvalidRangeError

N_FFT = 1024
HOP = 512
N_MELS = 128
DB_FLOOR_POWER = 1e-10


@dataclass(frozen=True)
class FeatureStats:
    """Global dB mean/std computed over the training split only."""

    mean: float
    std: float

    def __post_init__(self):
        if self.std <= 0:
            raise DegenerateStatsError(f"std must be positive, got {self.std}")


@dataclass(frozen=True)
class LogMelSpectrogram:
    """128 x T matrix of dB (or standardized) values with time provenance."""

    values: np.ndarray
    frame_hop: float
    origin: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values))
        if self.values.ndim != 2 or self.values.shape[0] != N_MELS:
            raise ValueError(f"expected {N_MELS} x T values, got {self.values.shape}")
        if self.values.shape[1] < 1:
            raise ValueError("need at least one frame")

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def _hann(n: int) -> np.ndarray:
    # periodic Hann, the window behind the stated frame-count convention
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / n))


def frame_count(n_samples: int, hop: int = HOP) -> int:
    return 1 + n_samples // hop


def stft_magnitude(samples: np.ndarray, n_fft: int = N_FFT, hop: int = HOP) -> np.ndarray:
    """Magnitude spectrogram (n_fft/2+1) x T with center/reflect padding."""
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        raise EmptyInputError("cannot compute STFT of empty signal")
    pad = n_fft // 2
    if samples.size == 1:
        padded = np.full(2 * pad + 1, samples[0])
    else:
        padded = np.pad(samples, pad, mode="reflect")
    n_frames = frame_count(samples.size, hop)
    window = _hann(n_fft)
    frames = np.lib.stride_tricks.sliding_window_view(padded, n_fft)[::hop][:n_frames]
    return np.abs(np.fft.rfft(frames * window, axis=1)).T


def hz_to_mel(freq):
    """Slaney mel scale: linear below 1 kHz, logarithmic above."""
    freq = np.asarray(freq, dtype=np.float64)
    f_sp = 200.0 / 3.0
    mel = freq / f_sp
    log_step = np.log(6.4) / 27.0
    above = freq >= 1000.0
    return np.where(above, 15.0 + np.log(np.maximum(freq, 1e-12) / 1000.0) / log_step, mel)


def mel_to_hz(mel):
    mel = np.asarray(mel, dtype=np.float64)
    f_sp = 200.0 / 3.0
    log_step = np.log(6.4) / 27.0
    above = mel >= 15.0
    return np.where(above, 1000.0 * np.exp(log_step * (mel - 15.0)), mel * f_sp)


def mel_filterbank(n_mels: int = N_MELS, sr: int = 22050, n_fft: int = N_FFT,
                   fmin: float = 0.0, fmax: float | None = None) -> np.ndarray:
    """Triangular mel filters (peak 1, no area normalization), n_mels x (n_fft/2+1)."""
    if fmax is None:
        fmax = sr / 2.0
    if not (0 <= fmin < fmax <= sr / 2.0):
        raise InvalidRangeError(f"need 0 <= fmin < fmax <= sr/2, got ({fmin}, {fmax})")
    edges = mel_to_hz(np.linspace(hz_to_mel(fmin), hz_to_mel(fmax), n_mels + 2))
    fft_freqs = np.arange(n_fft // 2 + 1) * (sr / n_fft)
    bank = np.zeros((n_mels, len(fft_freqs)))
    for i in range(n_mels):
        lo, center, hi = edges[i], edges[i + 1], edges[i + 2]
        up = (fft_freqs - lo) / max(center - lo, 1e-12)
        down = (hi - fft_freqs) / max(hi - center, 1e-12)
        bank[i] = np.maximum(0.0, np.minimum(up, down))
    return bank


_BANK_CACHE: dict[tuple, np.ndarray] = {}


def _cached_bank(n_mels: int, sr: int, n_fft: int) -> np.ndarray:
    key = (n_mels, sr, n_fft)
    if key not in _BANK_CACHE:
        _BANK_CACHE[key] = mel_filterbank(n_mels, sr, n_fft)
    return _BANK_CACHE[key]


def log_mel(clip: AudioClip) -> LogMelSpectrogram:
    """Un-standardized log-mel spectrogram; clip maximum maps to 0 dB."""
    mag = stft_magnitude(clip.samples)
    bank = _cached_bank(N_MELS, clip.sample_rate, N_FFT)
    power = bank @ (mag ** 2)
    ref = max(power.max(), DB_FLOOR_POWER)
    values = 10.0 * np.log10(np.maximum(power, DB_FLOOR_POWER) / ref)
    return LogMelSpectrogram(values=values, frame_hop=HOP / clip.sample_rate)


def silence_floor_db(spec: LogMelSpectrogram) -> float:
    """dB value a silent frame would take under this spectrogram's reference."""
    return float(spec.values.min()) if spec.values.size else 0.0


def compute_stats(specs: list[LogMelSpectrogram]) -> FeatureStats:
    """Pooled mean/std over all values of the given (training) spectrograms."""
    n = sum(s.values.size for s in specs)
    if n == 0:
        raise EmptyInputError("no spectrogram values to compute stats over")
    mean = sum(float(s.values.sum()) for s in specs) / n
    sq = sum(float(((s.values - mean) ** 2).sum()) for s in specs) / n
    std = float(np.sqrt(sq))
    if std <= 0:
        std = 1.0  # constant corpus; identity scaling keeps standardize defined
    return FeatureStats(mean=mean, std=std)


def standardize(spec: LogMelSpectrogram, stats: FeatureStats) -> LogMelSpectrogram:
    if stats.std <= 0:
        raise DegenerateStatsError("std must be positive")
    return LogMelSpectrogram(
        values=(spec.values - stats.mean) / stats.std,
        frame_hop=spec.frame_hop,
        origin=spec.origin,
    )


def unstandardize(spec: LogMelSpectrogram, stats: FeatureStats) -> LogMelSpectrogram:
    return LogMelSpectrogram(
        values=spec.values * stats.std + stats.mean,
        frame_hop=spec.frame_hop,
        origin=spec.origin,
    )


_CACHE_MAGIC = b"MASF"
_CACHE_VERSION = 1


def save_cache(path: str | Path, spec: LogMelSpectrogram,
               stats: FeatureStats | None = None) -> None:
    """Spectrogram cache: JSON header + row-major little-endian float32."""
    header = {
        "n_mels": int(spec.values.shape[0]),
        "n_frames": int(spec.values.shape[1]),
        "frame_hop": spec.frame_hop,
        "origin": spec.origin,
        "stats": None if stats is None else {"mean": stats.mean, "std": stats.std},
    }
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_CACHE_MAGIC)
        fh.write(struct.pack("<II", _CACHE_VERSION, len(blob)))
        fh.write(blob)
        fh.write(np.ascontiguousarray(spec.values, dtype="<f4").tobytes())


def load_cache(path: str | Path) -> tuple[LogMelSpectrogram, FeatureStats | None]:
    with open(path, "rb") as fh:
        if fh.read(4) != _CACHE_MAGIC:
            raise ValueError(f"{path}: not a spectrogram cache file")
        version, hlen = struct.unpack("<II", fh.read(8))
        if version != _CACHE_VERSION:
            raise ValueError(f"{path}: unsupported cache version {version}")
        header = json.loads(fh.read(hlen))
        data = np.frombuffer(fh.read(), dtype="<f4")
    values = data.reshape(header["n_mels"], header["n_frames"]).astype(np.float64)
    spec = LogMelSpectrogram(values=values, frame_hop=header["frame_hop"],
                             origin=header["origin"])
    stats = header.get("stats")
    return spec, None if stats is None else FeatureStats(**stats)
