"""Mel-frequency cepstral coefficients for 16 kHz waveforms.

Pipeline: pre-emphasis (0.97) -> 25 ms Hamming frames every 10 ms ->
magnitude FFT (size 256, frames longer than the FFT are truncated, the
standard behaviour for this parameter set) -> power spectrum -> 26
triangular mel filters spanning 0 Hz to Nyquist -> log energies floored
at 1e-10 -> orthonormal DCT-II, keeping the first 13 coefficients.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.fft import dct

from .errors import ConfigError, DataError, LengthError

LOG_FLOOR = 1e-10
PRE_EMPHASIS = 0.97


@dataclass(frozen=True)
class MfccConfig:
    sample_rate: int = 16000
    win_len: float = 0.025  # seconds
    hop_len: float = 0.010  # seconds
    n_filters: int = 26
    n_fft: int = 256
    n_cepstra: int = 13

    def __post_init__(self):
        if self.sample_rate <= 0 or self.win_len <= 0 or self.hop_len <= 0:
            raise ConfigError("mfcc: rates and window lengths must be positive")
        if self.n_filters < 1 or self.n_fft < 2 or self.n_cepstra < 1:
            raise ConfigError("mfcc: filter/fft/cepstra counts must be positive")
        if self.n_cepstra > self.n_filters:
            raise ConfigError("mfcc: n_cepstra must not exceed n_filters")

    @property
    def win_samples(self) -> int:
        return int(round(self.win_len * self.sample_rate))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop_len * self.sample_rate))


def num_frames(num_samples: int, cfg: MfccConfig) -> int:
    """1 + floor((n - win) / hop) for n >= win."""
    if num_samples < cfg.win_samples:
        raise LengthError(
            f"signal of {num_samples} samples is shorter than the "
            f"{cfg.win_samples}-sample analysis window")
    return 1 + (num_samples - cfg.win_samples) // cfg.hop_samples


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(cfg: MfccConfig) -> tuple[np.ndarray, np.ndarray]:
    """Triangular mel filters evaluated at the FFT bin frequencies.

    Returns (weights, centers_hz) with weights of shape
    (n_filters, n_fft // 2 + 1). Cached per config.
    """
    n_bins = cfg.n_fft // 2 + 1
    bin_hz = np.arange(n_bins) * cfg.sample_rate / cfg.n_fft
    edges_hz = mel_to_hz(np.linspace(0.0, hz_to_mel(cfg.sample_rate / 2.0),
                                     cfg.n_filters + 2))
    weights = np.zeros((cfg.n_filters, n_bins))
    for j in range(cfg.n_filters):
        lo, center, hi = edges_hz[j], edges_hz[j + 1], edges_hz[j + 2]
        rising = (bin_hz - lo) / (center - lo)
        falling = (hi - bin_hz) / (hi - center)
        weights[j] = np.maximum(0.0, np.minimum(rising, falling))
    return weights, edges_hz[1:-1]


@lru_cache(maxsize=8)
def _hamming(win: int) -> np.ndarray:
    return np.hamming(win)


def frame_signal(signal: np.ndarray, cfg: MfccConfig) -> np.ndarray:
    """Pre-emphasized, Hamming-windowed frames (n_frames, win_samples)."""
    x = np.asarray(signal, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise DataError("mfcc: signal contains non-finite samples")
    n = num_frames(x.size, cfg)
    emphasized = np.empty_like(x)
    emphasized[0] = x[0]
    emphasized[1:] = x[1:] - PRE_EMPHASIS * x[:-1]
    win, hop = cfg.win_samples, cfg.hop_samples
    starts = np.arange(n) * hop
    frames = emphasized[starts[:, None] + np.arange(win)[None, :]]
    return frames * _hamming(win)


def filterbank_energies(signal: np.ndarray, cfg: MfccConfig | None = None) -> np.ndarray:
    """Per-frame mel filter energies (n_frames, n_filters), pre-log."""
    cfg = cfg or MfccConfig()
    frames = frame_signal(signal, cfg)
    if frames.shape[1] > cfg.n_fft:
        frames = frames[:, :cfg.n_fft]
    spectrum = np.abs(np.fft.rfft(frames, n=cfg.n_fft, axis=1))
    power = spectrum ** 2
    weights, _ = mel_filterbank(cfg)
    return power @ weights.T


def mfcc(signal: np.ndarray, cfg: MfccConfig | None = None) -> np.ndarray:
    """MFCC matrix of shape (n_frames, n_cepstra)."""
    cfg = cfg or MfccConfig()
    energies = filterbank_energies(signal, cfg)
    log_energies = np.log(np.maximum(energies, LOG_FLOOR))
    coeffs = dct(log_energies, type=2, norm="ortho", axis=1)
    return coeffs[:, :cfg.n_cepstra]


def mfcc_to_csv(matrix: np.ndarray, path) -> None:
    """Debug dump: one row per frame, comma-separated, 9 significant digits."""
    matrix = np.asarray(matrix)
    with open(path, "w", encoding="utf-8") as fh:
        for row in matrix:
            fh.write(",".join(f"{v:.9g}" for v in row) + "\n")
