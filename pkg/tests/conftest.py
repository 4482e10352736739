import numpy as np
import pytest

SR = 22050


def make_sine(freq: float, duration: float, sr: int = SR, amp: float = 0.8) -> np.ndarray:
    t = np.arange(int(round(duration * sr))) / sr
    return amp * np.sin(2 * np.pi * freq * t)


def dominant_freq(samples: np.ndarray, sr: int = SR) -> float:
    """FFT-peak frequency with parabolic interpolation (independent oracle)."""
    n = len(samples)
    n_fft = 1 << int(np.ceil(np.log2(n * 4)))
    spec = np.abs(np.fft.rfft(samples * np.hanning(n), n_fft))
    k = int(np.argmax(spec))
    if 0 < k < len(spec) - 1:
        a, b, c = spec[k - 1], spec[k], spec[k + 1]
        denom = a - 2 * b + c
        k = k + (0.5 * (a - c) / denom if abs(denom) > 1e-12 else 0.0)
    return k * sr / n_fft


def cents_between(f1: float, f2: float) -> float:
    return abs(1200.0 * np.log2(f1 / f2))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
