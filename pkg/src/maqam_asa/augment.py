"""Waveform/spectrogram augmentation and imbalance-combat sampling.

Waveform transforms are pure given an explicit RNG; none of them may change a
window's labels. Policy ranges live in AugmentConfig and are deliberately
conservative for vocal material (pitch shifts beyond a semitone would turn
correct microtonal intervals into unlabeled errors).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .audio_io import resample
from .errors import NonFiniteError, RateOutOfRangeError

_STRETCH_N_FFT = 1024
_STRETCH_HOP = 256


@dataclass(frozen=True)
class AugmentConfig:
    time_stretch_range: tuple[float, float] = (0.9, 1.1)
    pitch_shift_range: tuple[float, float] = (-100.0, 100.0)
    noise_snr_range: tuple[float, float] = (20.0, 40.0)
    gain_range: tuple[float, float] = (-6.0, 6.0)
    spec_time_masks: int = 2
    spec_time_mask_max: int = 20
    spec_freq_masks: int = 2
    spec_freq_mask_max: int = 16
    apply_prob: float = 0.5

    def __post_init__(self):
        for lo, hi in (self.time_stretch_range, self.pitch_shift_range,
                       self.noise_snr_range, self.gain_range):
            if lo > hi:
                raise ValueError("config ranges must be ordered")
        if not 0.0 <= self.apply_prob <= 1.0:
            raise ValueError("apply_prob must be in [0, 1]")


def _stft_complex(y: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    pad = n_fft // 2
    padded = np.pad(y, pad, mode="reflect") if y.size > 1 else np.full(2 * pad + 1, y[0])
    n_frames = 1 + y.size // hop
    window = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft))
    frames = np.lib.stride_tricks.sliding_window_view(padded, n_fft)[::hop][:n_frames]
    return np.fft.rfft(frames * window, axis=1).T


def _istft(spec: np.ndarray, n_fft: int, hop: int) -> np.ndarray:
    window = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n_fft) / n_fft))
    n_frames = spec.shape[1]
    out_len = n_fft + hop * (n_frames - 1)
    out = np.zeros(out_len)
    norm = np.zeros(out_len)
    frames = np.fft.irfft(spec.T, n_fft, axis=1)
    for t in range(n_frames):
        sl = slice(t * hop, t * hop + n_fft)
        out[sl] += frames[t] * window
        norm[sl] += window ** 2
    out[norm > 1e-10] /= norm[norm > 1e-10]
    pad = n_fft // 2
    return out[pad:-pad] if out_len > 2 * pad else out


def time_stretch(samples: np.ndarray, rate: float) -> np.ndarray:
    """Phase-vocoder stretch: duration scales by 1/rate, pitch preserved."""
    if not 0.5 <= rate <= 2.0:
        raise RateOutOfRangeError(f"stretch rate {rate} outside [0.5, 2.0]")
    samples = np.asarray(samples, dtype=np.float64)
    if samples.size == 0:
        return samples.copy()
    spec = _stft_complex(samples, _STRETCH_N_FFT, _STRETCH_HOP)
    n_bins, n_frames = spec.shape
    steps = np.arange(0, n_frames, rate)
    omega = 2.0 * np.pi * _STRETCH_HOP * np.arange(n_bins) / _STRETCH_N_FFT

    spec_pad = np.concatenate([spec, np.zeros((n_bins, 2), dtype=spec.dtype)], axis=1)
    out = np.empty((n_bins, len(steps)), dtype=spec.dtype)
    phase = np.angle(spec[:, 0])
    for t, step in enumerate(steps):
        i = int(step)
        frac = step - i
        c0, c1 = spec_pad[:, i], spec_pad[:, i + 1]
        mag = (1.0 - frac) * np.abs(c0) + frac * np.abs(c1)
        out[:, t] = mag * np.exp(1j * phase)
        dphi = np.angle(c1) - np.angle(c0) - omega
        dphi -= 2.0 * np.pi * np.round(dphi / (2.0 * np.pi))
        phase = phase + omega + dphi
    return _istft(out, _STRETCH_N_FFT, _STRETCH_HOP)


def pitch_shift(samples: np.ndarray, cents: float, sample_rate: int = 22050) -> np.ndarray:
    """Shift f0 by 2^(cents/1200) at constant duration (stretch + resample)."""
    if abs(cents) > 1200.0:
        raise RateOutOfRangeError(f"pitch shift {cents} cents outside +/-1200")
    samples = np.asarray(samples, dtype=np.float64)
    if cents == 0.0 or samples.size == 0:
        return samples.copy()
    factor = 2.0 ** (cents / 1200.0)
    stretched = time_stretch(samples, 1.0 / factor)
    # playing the shortened/lengthened signal back at the original rate
    # compresses time by `factor`, scaling pitch with it
    shifted = resample(stretched, sample_rate, int(round(sample_rate / factor)))
    if len(shifted) > len(samples):
        shifted = shifted[: len(samples)]
    elif len(shifted) < len(samples):
        shifted = np.pad(shifted, (0, len(samples) - len(shifted)))
    return shifted


def add_noise(samples: np.ndarray, snr_db: float, rng: np.random.Generator) -> np.ndarray:
    """White noise at an exact SNR; silence gets noise at -60 dBFS RMS."""
    samples = np.asarray(samples, dtype=np.float64)
    if not np.all(np.isfinite(samples)):
        raise NonFiniteError("non-finite samples")
    noise = rng.standard_normal(samples.shape)
    noise_power = float(np.mean(noise ** 2))
    signal_power = float(np.mean(samples ** 2)) if samples.size else 0.0
    if signal_power == 0.0:
        target_rms = 10.0 ** (-60.0 / 20.0)
        return noise * (target_rms / np.sqrt(noise_power))
    target_power = signal_power / 10.0 ** (snr_db / 10.0)
    return samples + noise * np.sqrt(target_power / noise_power)


def apply_gain(samples: np.ndarray, gain_db: float) -> np.ndarray:
    samples = np.asarray(samples, dtype=np.float64)
    if not np.all(np.isfinite(samples)):
        raise NonFiniteError("non-finite samples")
    return samples * 10.0 ** (gain_db / 20.0)


def spec_augment(values: np.ndarray, config: AugmentConfig,
                 rng: np.random.Generator) -> np.ndarray:
    """Time/frequency masking on a standardized spectrogram (masked cells -> 0)."""
    out = np.array(values, copy=True)
    n_mels, n_frames = out.shape
    for _ in range(config.spec_freq_masks):
        width = int(rng.integers(0, config.spec_freq_mask_max + 1))
        if width == 0 or width > n_mels:
            continue
        start = int(rng.integers(0, n_mels - width + 1))
        out[start : start + width, :] = 0.0
    for _ in range(config.spec_time_masks):
        width = int(rng.integers(0, min(config.spec_time_mask_max, n_frames) + 1))
        if width == 0:
            continue
        start = int(rng.integers(0, n_frames - width + 1))
        out[:, start : start + width] = 0.0
    return out


def augment_waveform(samples: np.ndarray, config: AugmentConfig,
                     rng: np.random.Generator, sample_rate: int = 22050) -> np.ndarray:
    """Apply each waveform transform independently with probability apply_prob."""
    out = np.asarray(samples, dtype=np.float64)
    if rng.random() < config.apply_prob:
        out = time_stretch(out, float(rng.uniform(*config.time_stretch_range)))
    if rng.random() < config.apply_prob:
        out = pitch_shift(out, float(rng.uniform(*config.pitch_shift_range)), sample_rate)
    if rng.random() < config.apply_prob:
        out = add_noise(out, float(rng.uniform(*config.noise_snr_range)), rng)
    if rng.random() < config.apply_prob:
        out = apply_gain(out, float(rng.uniform(*config.gain_range)))
    return out


def weighted_sample_order(labels, class_weights: dict,
                          rng: np.random.Generator) -> np.ndarray:
    """Sampling-with-replacement order with P(i) proportional to weight(label_i)."""
    labels = list(labels)
    weights = np.array([class_weights[l] for l in labels], dtype=np.float64)
    if np.any(weights <= 0):
        raise ValueError("class weights must be positive")
    p = weights / weights.sum()
    return rng.choice(len(labels), size=len(labels), replace=True, p=p)


def hard_negative_mine(losses, fraction: float = 0.25) -> np.ndarray:
    """Indices of the top-`fraction` highest losses (stable ties, lowest index first)."""
    losses = np.asarray(losses, dtype=np.float64)
    if not np.all(np.isfinite(losses)):
        raise NonFiniteError("losses must be finite")
    if not 0.0 <= fraction <= 1.0:
        raise ValueError("fraction must be in [0, 1]")
    k = int(np.floor(len(losses) * fraction))
    order = np.argsort(-losses, kind="stable")
    return np.sort(order[:k])
