#!/usr/bin/env python3
"""MFCC extraction: shapes, mel filter geometry, and the scaling identity."""

import numpy as np

from asdgraph import MfccConfig, mfcc
from asdgraph.mfcc import filterbank_energies, mel_filterbank

cfg = MfccConfig()
print(f"defaults: {cfg.win_samples}-sample window every {cfg.hop_samples} "
      f"samples, {cfg.n_filters} filters, FFT {cfg.n_fft}, "
      f"{cfg.n_cepstra} cepstra")

rng = np.random.default_rng(0)
signal = rng.normal(size=6400)  # 0.4 s at 16 kHz
out = mfcc(signal)
print(f"0.4 s of noise -> MFCC matrix {out.shape}  "
      f"(1 + (6400-400)//160 = {1 + (6400 - 400) // 160} frames)")

weights, centers = mel_filterbank(cfg)
print(f"filter centers run {centers[0]:.0f} Hz .. {centers[-1]:.0f} Hz "
      f"(mel-spaced, denser at low frequencies)")

t = np.arange(8000) / 16000.0
sine = np.sin(2 * np.pi * 1000.0 * t)
energies = filterbank_energies(sine)
peak = int(np.argmax(energies.sum(axis=0)))
print(f"1 kHz sine peaks in filter {peak} "
      f"(center {centers[peak]:.0f} Hz)")

c = 5.0
base, scaled = mfcc(signal), mfcc(c * signal)
print(f"scaling by {c}: coefficient 0 shifts by "
      f"{np.mean(scaled[:, 0] - base[:, 0]):.6f} "
      f"(= log(c^2)*sqrt(26) = {np.log(c ** 2) * np.sqrt(26):.6f}), "
      f"others move by {np.max(np.abs(scaled[:, 1:] - base[:, 1:])):.2e}")
