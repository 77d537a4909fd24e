"""Simplified MDCT-quantize codec.

The codec keeps only the parts of a perceptual coder that matter for
parameter-domain embedding: a sine-windowed MDCT filter bank with 50%
overlap, uniform mid-tread quantization of the coefficients, and the inverse
windowed overlap-add. There is no psychoacoustic model and no entropy coder;
a fixed codeword-length surrogate stands in for the latter on the embedding
side (see embed.py).

Framing: the clip is trimmed to a whole number of half-blocks, then padded
with one silent half-block at each end. Time-domain alias cancellation then
reconstructs every trimmed sample exactly when coefficients are left
unquantized. The sub-half-block remainder is carried raw on the stream
(`tail`) so decode preserves clip length; it is not part of the serialized
format.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import struct

import numpy as np

from .audio_io import AudioClip
from .errors import CodecError

STREAM_MAGIC = b"SCS1"


@dataclass
class CodecConfig:
    frame_len: int = 512
    quant_step: float = 0.005
    seed: int = 0

    def __post_init__(self):
        n = self.frame_len
        if n < 32 or (n & (n - 1)) != 0:
            raise CodecError(f"frame_len must be a power of two >= 32, got {n}")
        if not self.quant_step > 0:
            raise CodecError(f"quant_step must be positive, got {self.quant_step}")


@dataclass
class CodedStream:
    """Quantized MDCT coefficients, one row per frame.

    `steps` holds the per-frame quantizer step; it equals the config step
    everywhere until an embedder re-quantizes individual frames.
    """

    frames: np.ndarray  # (n_frames, frame_len) int32
    steps: np.ndarray  # (n_frames,) float64
    config: CodecConfig
    tail: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sample_rate: int = 1

    def __post_init__(self):
        self.frames = np.ascontiguousarray(self.frames, dtype=np.int32)
        self.steps = np.ascontiguousarray(self.steps, dtype=np.float64)
        self.tail = np.ascontiguousarray(self.tail, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] != self.config.frame_len:
            raise CodecError("every frame must hold exactly frame_len coefficients")
        if self.steps.shape != (self.frames.shape[0],):
            raise CodecError("one quantizer step per frame required")
        if self.tail.size >= self.config.frame_len:
            raise CodecError("tail must be shorter than one half-block")

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    def copy(self) -> "CodedStream":
        return CodedStream(
            frames=self.frames.copy(),
            steps=self.steps.copy(),
            config=self.config,
            tail=self.tail.copy(),
            sample_rate=self.sample_rate,
        )


def sine_window(frame_len: int) -> np.ndarray:
    """Analysis/synthesis window w[k] = sin(pi (k + 0.5) / (2 N)) of length 2N."""
    k = np.arange(2 * frame_len)
    return np.sin(np.pi * (k + 0.5) / (2 * frame_len))


_BASIS_CACHE: dict[int, np.ndarray] = {}


def _mdct_basis(frame_len: int) -> np.ndarray:
    """Cosine basis C[k, n] = cos(pi/N (n + 0.5 + N/2)(k + 0.5)), shape (N, 2N)."""
    basis = _BASIS_CACHE.get(frame_len)
    if basis is None:
        n = np.arange(2 * frame_len)
        k = np.arange(frame_len)
        basis = np.cos(
            np.pi / frame_len * np.outer(k + 0.5, n + 0.5 + frame_len / 2.0)
        )
        _BASIS_CACHE[frame_len] = basis
    return basis


def mdct_forward(block: np.ndarray, frame_len: int | None = None) -> np.ndarray:
    """Windowed MDCT of one block of 2*frame_len samples.

    X[k] = sum_n w[n] x[n] cos(pi/N (n + 0.5 + N/2)(k + 0.5)), k in [0, N).
    """
    block = np.asarray(block, dtype=np.float64)
    if frame_len is None:
        if block.size % 2:
            raise CodecError("block length must be even")
        frame_len = block.size // 2
    if block.shape != (2 * frame_len,):
        raise CodecError(f"block must hold exactly {2 * frame_len} samples, got {block.shape}")
    return _mdct_basis(frame_len) @ (sine_window(frame_len) * block)


def mdct_inverse_ola(frames: np.ndarray) -> np.ndarray:
    """Inverse MDCT of a frame sequence with windowing and 50% overlap-add.

    Output has (n_frames + 1) * frame_len samples. For unquantized
    coefficients of a contiguous analysis, alias cancellation makes every
    sample that received two frame contributions exact; the first and last
    half-blocks carry only one contribution each.
    """
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if frames.size == 0:
        raise CodecError("no frames to synthesize")
    n_frames, frame_len = frames.shape
    w = sine_window(frame_len)
    # per-frame synthesis: y = (2/N) w * (C^T X), batched as one matmul
    blocks = (frames @ _mdct_basis(frame_len)) * (2.0 / frame_len) * w
    out = np.zeros((n_frames + 1) * frame_len)
    for i in range(n_frames):
        out[i * frame_len : (i + 2) * frame_len] += blocks[i]
    return out


def quantize(coeffs: np.ndarray, step: float) -> np.ndarray:
    """Uniform quantization q = round(c / step), rounding halves away from zero."""
    scaled = np.asarray(coeffs, dtype=np.float64) / step
    return (np.sign(scaled) * np.floor(np.abs(scaled) + 0.5)).astype(np.int32)


def encode_clip(clip: AudioClip, config: CodecConfig) -> CodedStream:
    """Analyze, transform and quantize a clip into a coded stream."""
    n = config.frame_len
    x = clip.samples
    if x.size < 2 * n:
        raise CodecError(f"clip of {x.size} samples is shorter than one block ({2 * n})")
    usable = (x.size // n) * n
    tail = x[usable:].copy()
    padded = np.concatenate([np.zeros(n), x[:usable], np.zeros(n)])
    n_frames = usable // n + 1
    # gather 50%-overlapped blocks, then batch the windowed transform
    idx = np.arange(2 * n)[None, :] + (np.arange(n_frames) * n)[:, None]
    blocks = padded[idx]
    coeffs = (blocks * sine_window(n)) @ _mdct_basis(n).T
    frames = quantize(coeffs, config.quant_step)
    steps = np.full(n_frames, config.quant_step)
    return CodedStream(
        frames=frames, steps=steps, config=config, tail=tail, sample_rate=clip.sample_rate
    )


def decode_clip(stream: CodedStream) -> AudioClip:
    """Dequantize and synthesize a stream back to a clip.

    Uses the per-frame quantizer step, trims the silent padding introduced at
    encode time, re-appends the raw tail, and clamps to [-1, 1].
    """
    n = stream.config.frame_len
    coeffs = stream.frames.astype(np.float64) * stream.steps[:, None]
    synth = mdct_inverse_ola(coeffs)
    usable = (stream.n_frames - 1) * n
    body = synth[n : n + usable]
    samples = np.clip(np.concatenate([body, stream.tail]), -1.0, 1.0)
    return AudioClip(samples=samples, sample_rate=stream.sample_rate)


def save_stream(stream: CodedStream, path) -> None:
    """Serialize: magic "SCS1", frame_len u32, step f64, count u32, then per
    frame its step f64 followed by frame_len little-endian int32 coefficients.

    The raw tail is deliberately not part of the format.
    """
    with open(path, "wb") as fh:
        fh.write(STREAM_MAGIC)
        fh.write(struct.pack("<IdI", stream.config.frame_len, stream.config.quant_step,
                             stream.n_frames))
        for i in range(stream.n_frames):
            fh.write(struct.pack("<d", stream.steps[i]))
            fh.write(stream.frames[i].astype("<i4").tobytes())


def load_stream(path, seed: int = 0, sample_rate: int = 1) -> CodedStream:
    """Read a serialized stream.

    The format carries neither the generation seed nor the sample rate; both
    can be restored through the keyword arguments when known.
    """
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != STREAM_MAGIC:
            raise CodecError(f"{path}: bad magic {magic!r}")
        frame_len, step, count = struct.unpack("<IdI", fh.read(16))
        config = CodecConfig(frame_len=frame_len, quant_step=step, seed=seed)
        frames = np.empty((count, frame_len), dtype=np.int32)
        steps = np.empty(count)
        for i in range(count):
            (steps[i],) = struct.unpack("<d", fh.read(8))
            buf = fh.read(4 * frame_len)
            if len(buf) < 4 * frame_len:
                raise CodecError(f"{path}: truncated frame {i}")
            frames[i] = np.frombuffer(buf, dtype="<i4")
    return CodedStream(frames=frames, steps=steps, config=config, sample_rate=sample_rate)
