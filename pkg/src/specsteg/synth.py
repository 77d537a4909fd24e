"""Synthetic tonal/noise audio for desk-scale experiments.

Each clip mixes a handful of stable sinusoids with slowly varying amplitude
envelopes over a low-passed noise floor, loosely imitating the spectral
shape of tonal music without needing a real corpus. Generation is a pure
function of the seed.
"""

from __future__ import annotations

import numpy as np

from .audio_io import AudioClip


def synth_clip(seed: int, duration_s: float = 2.0, sample_rate: int = 16000) -> AudioClip:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x5C1F])))
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate

    signal = np.zeros(n)
    n_tones = int(rng.integers(2, 7))
    for _ in range(n_tones):
        freq = float(np.exp(rng.uniform(np.log(60.0), np.log(0.42 * sample_rate))))
        phase = float(rng.uniform(0.0, 2.0 * np.pi))
        amp = float(rng.uniform(0.1, 1.0))
        # slow amplitude wobble keeps frames from being identical
        env_rate = float(rng.uniform(0.3, 3.0))
        env_phase = float(rng.uniform(0.0, 2.0 * np.pi))
        env = 1.0 + 0.5 * np.sin(2.0 * np.pi * env_rate * t + env_phase)
        signal += amp * env * np.sin(2.0 * np.pi * freq * t + phase)

    # low-passed noise floor so every frame has small-coefficient content
    white = rng.normal(0.0, 1.0, n)
    pole = float(rng.uniform(0.5, 0.95))
    noise = np.convolve(white, np.power(pole, np.arange(24)))[:n]
    noise_level = float(rng.uniform(0.01, 0.08))
    signal += noise_level * noise / max(np.abs(noise).max(), 1e-12) * np.abs(signal).max()

    peak = float(rng.uniform(0.3, 0.8))
    signal *= peak / max(np.abs(signal).max(), 1e-12)
    return AudioClip(samples=signal, sample_rate=sample_rate)


def synth_corpus(n_clips: int, seed: int, duration_s: float = 2.0,
                 sample_rate: int = 16000) -> list[AudioClip]:
    return [synth_clip(seed * 100_003 + i, duration_s, sample_rate) for i in range(n_clips)]
