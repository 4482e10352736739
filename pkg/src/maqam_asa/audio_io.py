"""Audio ingestion: decode PCM WAV, mix down, resample, peak-normalize.

Every clip entering the pipeline is canonicalized to mono 22050 Hz with peak
amplitude 1.0 (all-zero clips stay zero).
"""

from __future__ import annotations

import math
import wave
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.signal import resample_poly

from .errors import CorruptHeaderError, NonFiniteError, UnsupportedFormatError

CANONICAL_RATE = 22050


@dataclass(frozen=True)
class AudioClip:
    """Decoded mono waveform with provenance."""

    samples: np.ndarray
    sample_rate: int = CANONICAL_RATE
    song_id: str = ""
    singer_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.float64))
        if self.sample_rate <= 0:
            raise ValueError("sample_rate must be positive")

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


def peak_normalize(samples: np.ndarray) -> np.ndarray:
    """Scale so the absolute peak is 1.0; all-zero input passes through."""
    samples = np.asarray(samples, dtype=np.float64)
    if not np.all(np.isfinite(samples)):
        raise NonFiniteError("cannot normalize non-finite samples")
    peak = np.max(np.abs(samples)) if samples.size else 0.0
    if peak == 0.0:
        return samples.copy()
    return samples / peak


def resample(samples: np.ndarray, from_rate: int, to_rate: int) -> np.ndarray:
    """Polyphase windowed-sinc resampling; output length = round(n * to/from)."""
    if from_rate <= 0 or to_rate <= 0:
        raise ValueError("sample rates must be positive")
    samples = np.asarray(samples, dtype=np.float64)
    if from_rate == to_rate:
        return samples.copy()
    ratio = Fraction(to_rate, from_rate)
    out = resample_poly(samples, ratio.numerator, ratio.denominator)
    target = int(round(len(samples) * to_rate / from_rate))
    if len(out) > target:
        out = out[:target]
    elif len(out) < target:
        out = np.pad(out, (0, target - len(out)))
    return out


def _decode_pcm(raw: bytes, sampwidth: int, n_channels: int) -> np.ndarray:
    if sampwidth == 2:
        data = np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0
    elif sampwidth == 3:
        b = np.frombuffer(raw, dtype=np.uint8).reshape(-1, 3).astype(np.int32)
        val = b[:, 0] | (b[:, 1] << 8) | (b[:, 2] << 16)
        val -= (val & 0x800000) << 1  # sign-extend 24-bit
        data = val.astype(np.float64) / 8388608.0
    else:
        raise UnsupportedFormatError(f"unsupported sample width {sampwidth * 8} bits")
    return data.reshape(-1, n_channels)


def load_wav(path: str | Path, song_id: str = "", singer_id: str = "") -> AudioClip:
    """Decode a 16/24-bit PCM WAV into a canonical clip.

    Mixdown (channel mean) and resampling happen before peak normalization.
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(str(path))
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            rate = wf.getframerate()
            raw = wf.readframes(wf.getnframes())
    except wave.Error as exc:
        msg = str(exc).lower()
        if "unknown format" in msg or "compression" in msg:
            raise UnsupportedFormatError(f"{path.name}: {exc}") from exc
        raise CorruptHeaderError(f"{path.name}: {exc}") from exc
    except EOFError as exc:
        raise CorruptHeaderError(f"{path.name}: truncated file") from exc

    if n_channels not in (1, 2):
        raise UnsupportedFormatError(f"{path.name}: {n_channels} channels unsupported")
    if rate <= 0:
        raise CorruptHeaderError(f"{path.name}: invalid sample rate {rate}")

    frames = _decode_pcm(raw, sampwidth, n_channels)
    mono = frames.mean(axis=1)
    if rate != CANONICAL_RATE:
        mono = resample(mono, rate, CANONICAL_RATE)
    samples = peak_normalize(mono)
    if not song_id:
        song_id = path.stem
    return AudioClip(samples=samples, sample_rate=CANONICAL_RATE,
                     song_id=song_id, singer_id=singer_id)


def save_wav(path: str | Path, clip: AudioClip) -> None:
    """Write mono 16-bit PCM."""
    samples = np.clip(clip.samples, -1.0, 1.0)
    pcm = np.round(samples * 32767.0).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(pcm.tobytes())
