"""Log-magnitude spectrogram extraction.

A clip is framed with 50% overlap under a periodic Hann window of length N;
each frame keeps the first N/2 DFT bins (the rest mirror them), and the
magnitude is mapped to dB with an additive floor so the output is always
finite. Rows are frequency bins, columns are frames.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .audio_io import AudioClip
from .errors import CodecError

MAGNITUDE_FLOOR = 1e-10
SPECTROGRAM_MAGIC = b"SPG1"


@dataclass
class SpectrogramMatrix:
    values: np.ndarray  # (n, m) = (window/2, frames) float64
    window_size: int
    sample_rate: int

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise CodecError("spectrogram values must be 2-d")
        if self.values.shape[0] != self.window_size // 2:
            raise CodecError("row count must equal half the window size")
        if not np.all(np.isfinite(self.values)):
            raise CodecError("spectrogram contains non-finite values")

    @property
    def hop(self) -> int:
        return self.window_size // 2

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape


def hann_window(n: int) -> np.ndarray:
    """Periodic Hann window (exact constant overlap-add at 50%)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def stft_frame(samples: np.ndarray, window_size: int | None = None) -> np.ndarray:
    """Hann-windowed DFT of one frame, keeping bins 0 .. N/2 - 1."""
    samples = np.asarray(samples, dtype=np.float64)
    n = window_size if window_size is not None else samples.size
    if samples.shape != (n,):
        raise CodecError(f"frame must hold exactly {n} samples, got {samples.shape}")
    return np.fft.rfft(samples * hann_window(n))[: n // 2]


def frame_count(n_samples: int, window_size: int) -> int:
    """Number of full analysis windows at 50% overlap."""
    if n_samples < window_size:
        return 0
    return (n_samples - window_size) // (window_size // 2) + 1


def spectrogram(clip: AudioClip, window_size: int,
                pad_to_frames: int | None = None) -> SpectrogramMatrix:
    """Compute the n x m log-magnitude grid for a clip.

    `pad_to_frames` zero-pads the clip tail so the frame count reaches the
    given target; it cannot shrink the natural count.
    """
    n = window_size
    if n < 4 or (n & (n - 1)) != 0:
        raise CodecError(f"window size must be a power of two >= 4, got {n}")
    x = clip.samples
    if x.size < n:
        raise CodecError(f"clip of {x.size} samples is shorter than the window ({n})")
    hop = n // 2
    m = frame_count(x.size, n)
    if pad_to_frames is not None:
        if pad_to_frames < m:
            raise CodecError(f"pad_to_frames={pad_to_frames} below natural frame count {m}")
        needed = n + (pad_to_frames - 1) * hop
        x = np.concatenate([x, np.zeros(needed - x.size)]) if needed > x.size else x
        m = pad_to_frames
    idx = np.arange(n)[None, :] + (np.arange(m) * hop)[:, None]
    spectra = np.fft.rfft(x[idx] * hann_window(n), axis=1)[:, : n // 2]
    values = 20.0 * np.log10(np.abs(spectra) + MAGNITUDE_FLOOR)
    return SpectrogramMatrix(values=values.T.copy(), window_size=n,
                             sample_rate=clip.sample_rate)


def save_spectrogram(spec: SpectrogramMatrix, path) -> None:
    """Binary layout: "SPG1", N, n, m, rate (u32 each), then n*m float32 in
    column-major (time-major) order."""
    n, m = spec.shape
    with open(path, "wb") as fh:
        fh.write(SPECTROGRAM_MAGIC)
        fh.write(struct.pack("<IIII", spec.window_size, n, m, spec.sample_rate))
        fh.write(spec.values.astype("<f4").T.tobytes())


def load_spectrogram(path) -> SpectrogramMatrix:
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != SPECTROGRAM_MAGIC:
            raise CodecError(f"{path}: bad magic {magic!r}")
        window_size, n, m, rate = struct.unpack("<IIII", fh.read(16))
        buf = fh.read(4 * n * m)
        if len(buf) < 4 * n * m:
            raise CodecError(f"{path}: truncated value block")
    values = np.frombuffer(buf, dtype="<f4").reshape(m, n).T.astype(np.float64)
    return SpectrogramMatrix(values=values, window_size=window_size, sample_rate=rate)
