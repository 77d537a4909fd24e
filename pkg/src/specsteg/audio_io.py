"""PCM audio ingestion, writing, and segmentation.

Everything downstream consumes one canonical form: mono float64 samples in
[-1, 1] plus a sample rate. Stereo input is collapsed by per-sample channel
mean at read time; no resampling is ever performed.
"""

from __future__ import annotations

import wave
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AudioFormatError

PCM_SCALE_IN = 32768.0
PCM_SCALE_OUT = 32767.0


@dataclass
class AudioClip:
    """Mono PCM audio held as normalized float64 samples."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise AudioFormatError("clip must hold a non-empty 1-d sample array")
        if self.sample_rate <= 0:
            raise AudioFormatError(f"sample rate must be positive, got {self.sample_rate}")
        peak = float(np.max(np.abs(self.samples)))
        if peak > 1.0 + 1e-12:
            raise AudioFormatError(f"samples exceed [-1, 1] (peak {peak:.6g})")

    @property
    def duration(self) -> float:
        return self.samples.size / self.sample_rate

    def __len__(self) -> int:
        return self.samples.size


def read_wav(path) -> AudioClip:
    """Read a 16-bit PCM RIFF/WAVE file as a mono clip.

    Stereo files are collapsed by the per-sample mean of both channels.
    Samples are scaled by 1/32768.
    """
    path = Path(path)
    if not path.exists():
        raise AudioFormatError(f"no such file: {path}")
    try:
        with wave.open(str(path), "rb") as wf:
            n_channels = wf.getnchannels()
            sampwidth = wf.getsampwidth()
            rate = wf.getframerate()
            n_frames = wf.getnframes()
            raw = wf.readframes(n_frames)
    except wave.Error as exc:
        raise AudioFormatError(f"{path}: not a readable PCM WAV ({exc})") from exc
    if sampwidth != 2:
        raise AudioFormatError(f"{path}: unsupported bit depth {8 * sampwidth} (need 16-bit PCM)")
    if n_channels not in (1, 2):
        raise AudioFormatError(f"{path}: unsupported channel count {n_channels}")
    if len(raw) < n_frames * n_channels * 2:
        raise AudioFormatError(f"{path}: truncated data chunk")
    data = np.frombuffer(raw, dtype="<i2").astype(np.float64)
    if n_channels == 2:
        data = data.reshape(-1, 2).mean(axis=1)
    return AudioClip(samples=data / PCM_SCALE_IN, sample_rate=rate)


def write_wav(clip: AudioClip, path) -> None:
    """Write a clip as mono 16-bit PCM, clamping to [-1, 1] first."""
    clamped = np.clip(clip.samples, -1.0, 1.0)
    ints = np.rint(clamped * PCM_SCALE_OUT).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(clip.sample_rate)
        wf.writeframes(ints.tobytes())


def segment(clip: AudioClip, duration_s: float) -> list[AudioClip]:
    """Cut a clip into consecutive non-overlapping windows of fixed duration.

    Window length is floor(duration_s * rate) samples; the trailing remainder
    is discarded. A clip shorter than one window yields an empty list.
    """
    n = int(np.floor(duration_s * clip.sample_rate))
    if n < 1:
        raise AudioFormatError(f"segment duration {duration_s} s is below one sample")
    count = clip.samples.size // n
    return [
        AudioClip(samples=clip.samples[i * n : (i + 1) * n].copy(), sample_rate=clip.sample_rate)
        for i in range(count)
    ]
