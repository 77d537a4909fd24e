"""Four embedders over quantized MDCT coefficients.

Each scheme hides one message bit per carrier position:

* LSB_ESC — least significant bit of large-magnitude coefficients (|q| > 16),
  the escape-coded range; sign preserved, magnitude adjusted by at most 1.
* MIN — parity of the combined index of aligned groups of four consecutive
  small coefficients (all in {-1, 0, 1}); only the last group member moves.
* SIGN — sign of small non-zero coefficients (0 < |q| <= T); 0 encodes
  negative, 1 positive.
* PARITY — parity of a frame's surrogate codeword cost, steered by
  re-quantizing the whole frame with a slightly perturbed step.

Carrier positions are visited in a pseudorandom permutation of the eligible
set, seeded from the stream's codec seed, so embed and extract agree without
side channels. Every scheme preserves its own eligibility predicate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .codec import CodedStream, quantize
from .errors import CapacityError, ParityUnreachableError

INDEX_BIAS = 40
ESCAPE_THRESHOLD = 16
PARITY_SEARCH_STEPS = 50


class Scheme(Enum):
    LSB_ESC = "lsb_esc"
    MIN = "min"
    SIGN = "sign"
    PARITY = "parity"


@dataclass
class StegoJob:
    scheme: Scheme
    ebr: float
    message: np.ndarray
    sign_threshold: int = 4

    def __post_init__(self):
        if not 0.0 < self.ebr <= 1.0:
            raise CapacityError(f"ebr must lie in (0, 1], got {self.ebr}")
        if self.sign_threshold < 1:
            raise CapacityError("sign threshold must be a positive integer")
        self.message = np.ascontiguousarray(self.message, dtype=np.uint8)
        if self.message.size and not np.all((self.message == 0) | (self.message == 1)):
            raise CapacityError("message must be a bit sequence")


def random_message(n_bits: int, seed: int) -> np.ndarray:
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 0x6D5347])))
    return rng.integers(0, 2, size=n_bits, dtype=np.uint8)


def make_job(stream: CodedStream, scheme: Scheme, ebr: float, message_seed: int,
             sign_threshold: int = 4) -> StegoJob:
    """Build a job whose message fills the given fraction of the capacity."""
    cap = capacity(stream, scheme, sign_threshold=sign_threshold)
    n_bits = int(np.floor(ebr * cap))
    return StegoJob(scheme=scheme, ebr=ebr, sign_threshold=sign_threshold,
                    message=random_message(n_bits, message_seed))


def group_index(q4) -> int:
    """Combined codebook index of four small coefficients: sum 3^i q[i] + 40."""
    q4 = np.asarray(q4)
    if q4.shape != (4,) or np.any(np.abs(q4) > 1):
        raise ValueError("group must hold four coefficients in {-1, 0, 1}")
    return int(q4[0] + 3 * q4[1] + 9 * q4[2] + 27 * q4[3]) + INDEX_BIAS


def decode_group_index(index: int) -> np.ndarray:
    """Invert group_index; valid for every index produced from a group."""
    v = index - INDEX_BIAS + 40  # shift so digits are plain base-3
    digits = np.empty(4, dtype=np.int32)
    for i in range(4):
        digits[i] = v % 3 - 1
        v //= 3
    return digits


def codeword_cost(q: np.ndarray) -> np.ndarray:
    """Surrogate entropy-coded length: one selector bit plus one bit per
    magnitude unit, so any single magnitude step flips the frame-cost parity
    the way a real coder's bit count would."""
    q = np.asarray(q)
    return 1 + np.abs(q)


def frame_cost(frame: np.ndarray) -> int:
    return int(codeword_cost(frame).sum())


def _eligible_lsb(stream: CodedStream) -> np.ndarray:
    return np.flatnonzero(np.abs(stream.frames) > ESCAPE_THRESHOLD)


def _eligible_sign(stream: CodedStream, threshold: int) -> np.ndarray:
    mag = np.abs(stream.frames)
    return np.flatnonzero((mag > 0) & (mag <= threshold))


def _eligible_min_groups(stream: CodedStream) -> np.ndarray:
    """Flat indices of the first coefficient of each eligible aligned 4-group."""
    f, n = stream.frames.shape
    grouped = np.abs(stream.frames.reshape(f, n // 4, 4))
    ok = (grouped <= 1).all(axis=2)
    return np.flatnonzero(ok.ravel()) * 4


def capacity(stream: CodedStream, scheme: Scheme, sign_threshold: int = 4) -> int:
    """Number of message bits the stream can carry under a scheme."""
    if scheme is Scheme.LSB_ESC:
        return int(_eligible_lsb(stream).size)
    if scheme is Scheme.MIN:
        return int(_eligible_min_groups(stream).size)
    if scheme is Scheme.SIGN:
        return int(_eligible_sign(stream, sign_threshold).size)
    if scheme is Scheme.PARITY:
        return stream.n_frames
    raise ValueError(f"unknown scheme {scheme}")


def _position_order(stream: CodedStream, scheme: Scheme, n_eligible: int) -> np.ndarray:
    seq = np.random.SeedSequence([stream.config.seed, list(Scheme).index(scheme)])
    rng = np.random.Generator(np.random.PCG64(seq))
    return rng.permutation(n_eligible)


def _embed_lsb_value(mag: int, bit: int) -> int:
    # plain LSB replacement, except 17 -> 18 for bit 0 to stay above the
    # escape boundary
    if mag & 1 == bit:
        return mag
    if mag == ESCAPE_THRESHOLD + 1 and bit == 0:
        return mag + 1
    return (mag & ~1) | bit


_MIN_PARITY_MOVE = {-1: 0, 0: 1, 1: 0}  # nearest value flipping index parity


def embed(stream: CodedStream, job: StegoJob) -> CodedStream:
    """Return a copy of the stream carrying the job's message."""
    bits = job.message
    cap = capacity(stream, job.scheme, sign_threshold=job.sign_threshold)
    if bits.size > cap:
        raise CapacityError(f"message of {bits.size} bits exceeds capacity {cap}")
    out = stream.copy()
    if bits.size == 0:
        return out
    order = _position_order(stream, job.scheme, cap)
    flat = out.frames.ravel()

    if job.scheme is Scheme.LSB_ESC:
        positions = _eligible_lsb(stream)[order[: bits.size]]
        for pos, bit in zip(positions, bits):
            q = int(flat[pos])
            flat[pos] = int(np.sign(q)) * _embed_lsb_value(abs(q), int(bit))

    elif job.scheme is Scheme.MIN:
        starts = _eligible_min_groups(stream)[order[: bits.size]]
        for start, bit in zip(starts, bits):
            group = flat[start : start + 4]
            if group_index(group) % 2 != bit:
                group[3] = _MIN_PARITY_MOVE[int(group[3])]

    elif job.scheme is Scheme.SIGN:
        positions = _eligible_sign(stream, job.sign_threshold)[order[: bits.size]]
        mags = np.abs(flat[positions])
        flat[positions] = np.where(bits == 1, mags, -mags)

    elif job.scheme is Scheme.PARITY:
        frame_ids = order[: bits.size]
        for fid, bit in zip(frame_ids, bits):
            _steer_frame_parity(out, int(fid), int(bit))

    return out


def _steer_frame_parity(stream: CodedStream, fid: int, bit: int) -> None:
    """Re-quantize frame fid with steps step*(1+delta), delta walking through
    +-0.01, +-0.02, ... until the surrogate cost parity equals the bit."""
    if frame_cost(stream.frames[fid]) % 2 == bit:
        return
    base_step = stream.steps[fid]
    coeffs = stream.frames[fid].astype(np.float64) * base_step
    for k in range(1, PARITY_SEARCH_STEPS + 1):
        magnitude = 0.01 * ((k + 1) // 2)
        delta = magnitude if k % 2 == 1 else -magnitude
        new_step = base_step * (1.0 + delta)
        requant = quantize(coeffs, new_step)
        if frame_cost(requant) % 2 == bit:
            stream.frames[fid] = requant
            stream.steps[fid] = new_step
            return
    raise ParityUnreachableError(
        f"frame {fid}: cost parity cannot reach {bit} within {PARITY_SEARCH_STEPS} steps"
    )


def extract(stream: CodedStream, job: StegoJob) -> np.ndarray:
    """Recover the embedded bits; exact inverse of embed for the same job."""
    cap = capacity(stream, job.scheme, sign_threshold=job.sign_threshold)
    n_bits = int(np.floor(job.ebr * cap))
    if job.message.size and job.message.size != n_bits:
        raise CapacityError(
            f"job message length {job.message.size} disagrees with "
            f"floor(ebr * capacity) = {n_bits}"
        )
    if n_bits == 0:
        return np.zeros(0, dtype=np.uint8)
    order = _position_order(stream, job.scheme, cap)
    flat = stream.frames.ravel()

    if job.scheme is Scheme.LSB_ESC:
        positions = _eligible_lsb(stream)[order[:n_bits]]
        return (np.abs(flat[positions]) & 1).astype(np.uint8)
    if job.scheme is Scheme.MIN:
        starts = _eligible_min_groups(stream)[order[:n_bits]]
        return np.array([group_index(flat[s : s + 4]) % 2 for s in starts], dtype=np.uint8)
    if job.scheme is Scheme.SIGN:
        positions = _eligible_sign(stream, job.sign_threshold)[order[:n_bits]]
        return (flat[positions] > 0).astype(np.uint8)
    if job.scheme is Scheme.PARITY:
        frame_ids = order[:n_bits]
        return np.array([frame_cost(stream.frames[f]) % 2 for f in frame_ids], dtype=np.uint8)
    raise ValueError(f"unknown scheme {job.scheme}")
