"""Residual preprocessing filters for spectrograms.

Embedding noise is faint next to the audio content, so the spectrogram is
passed through a bank of four zero-sum 3x3 kernels before feature
extraction: first- and second-order differences along the frequency and time
axes. The bank is loadable from disk, and a data-driven alternative can be
fitted by regressing each interior cell on its eight neighbours.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateCoverError, CodecError
from .spectrogram import SpectrogramMatrix

ZERO_SUM_TOL = 1e-9

# neighbour offsets in reading order around the centre, paired with the
# regression coefficient order beta_1 .. beta_8
NEIGHBOR_OFFSETS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


@dataclass
class FilterBank:
    kernels: np.ndarray  # (4, 3, 3) float64

    def __post_init__(self):
        self.kernels = np.ascontiguousarray(self.kernels, dtype=np.float64)
        if self.kernels.shape != (4, 3, 3):
            raise CodecError(f"bank must hold four 3x3 kernels, got {self.kernels.shape}")
        sums = np.abs(self.kernels.sum(axis=(1, 2)))
        if np.any(sums > ZERO_SUM_TOL):
            raise CodecError(f"kernels must sum to zero (max |sum| {sums.max():.3g})")


def default_filter_bank() -> FilterBank:
    """Vertical/horizontal first and second differences.

    The vertical pair reacts to changes across neighbouring frequency bins
    within a frame, the horizontal pair across successive frames in a band.
    """
    k1 = [[0, 1, 0], [0, -1, 0], [0, 0, 0]]
    k2 = [[0, 0, 0], [1, -1, 0], [0, 0, 0]]
    k3 = [[0, 1, 0], [0, -2, 0], [0, 1, 0]]
    k4 = [[0, 0, 0], [1, -2, 1], [0, 0, 0]]
    return FilterBank(kernels=np.array([k1, k2, k3, k4], dtype=np.float64))


def apply_filter_bank(spec, bank: FilterBank | None = None) -> np.ndarray:
    """Cross-correlate each kernel with the spectrogram.

    Zero padding of 1 on all sides, stride 1, so the output is (1, 4, n, m)
    for an n x m input. Accepts a SpectrogramMatrix or a bare 2-d array.
    """
    if bank is None:
        bank = default_filter_bank()
    values = spec.values if isinstance(spec, SpectrogramMatrix) else np.asarray(spec, dtype=np.float64)
    if values.ndim != 2 or values.shape[0] < 3 or values.shape[1] < 3:
        raise CodecError(f"spectrogram must be at least 3x3, got {values.shape}")
    n, m = values.shape
    padded = np.zeros((n + 2, m + 2))
    padded[1:-1, 1:-1] = values
    out = np.zeros((1, 4, n, m))
    for c in range(4):
        acc = out[0, c]
        for dy in range(3):
            for dx in range(3):
                w = bank.kernels[c, dy, dx]
                if w != 0.0:
                    acc += w * padded[dy : dy + n, dx : dx + m]
    return out


@dataclass
class RegressionFit:
    """Least-squares fit of centre cells on their eight neighbours."""

    beta: np.ndarray  # (9,) bias first, then NEIGHBOR_OFFSETS order
    n_samples: int

    def as_residual_kernel(self) -> np.ndarray:
        """3x3 kernel with -1 at the centre and the fitted neighbour weights
        around it; the bias is dropped."""
        kernel = np.zeros((3, 3))
        kernel[1, 1] = -1.0
        for coef, (dy, dx) in zip(self.beta[1:], NEIGHBOR_OFFSETS):
            kernel[1 + dy, 1 + dx] = coef
        return kernel


def fit_regression_filter(covers: list) -> RegressionFit:
    """Fit the neighbourhood regression over all interior 3x3 patches.

    Normal equations are accumulated across covers so arbitrarily many
    spectrograms fit in memory. Raises DegenerateCoverError when the design
    has no usable variance (e.g. constant covers).
    """
    if not covers:
        raise DegenerateCoverError("no covers supplied")
    xtx = np.zeros((9, 9))
    xty = np.zeros(9)
    total = 0
    for cover in covers:
        values = cover.values if isinstance(cover, SpectrogramMatrix) else np.asarray(cover, dtype=np.float64)
        if values.shape[0] < 3 or values.shape[1] < 3:
            continue
        center = values[1:-1, 1:-1].ravel()
        cols = [np.ones(center.size)]
        for dy, dx in NEIGHBOR_OFFSETS:
            n, m = values.shape
            cols.append(values[1 + dy : n - 1 + dy, 1 + dx : m - 1 + dx].ravel())
        design = np.stack(cols, axis=1)
        xtx += design.T @ design
        xty += design.T @ center
        total += center.size
    if total < 1000:
        raise DegenerateCoverError(f"only {total} neighbourhoods available, need >= 1000")
    if np.linalg.matrix_rank(xtx) < 9:
        raise DegenerateCoverError("degenerate cover set: normal equations are rank-deficient")
    beta = np.linalg.solve(xtx, xty)
    return RegressionFit(beta=beta, n_samples=total)


def save_filter_bank(bank: FilterBank, path) -> None:
    """Plain text: four blocks of three rows with three reals, blank-line
    separated."""
    blocks = []
    for kernel in bank.kernels:
        blocks.append("\n".join(" ".join(f"{v!r}" for v in row) for row in kernel))
    with open(path, "w") as fh:
        fh.write("\n\n".join(blocks) + "\n")


def load_filter_bank(path) -> FilterBank:
    with open(path) as fh:
        rows = [line.split() for line in fh if line.strip()]
    if len(rows) != 12 or any(len(r) != 3 for r in rows):
        raise CodecError(f"{path}: expected 4 blocks of 3x3 values")
    flat = np.array([[float(v) for v in row] for row in rows])
    return FilterBank(kernels=flat.reshape(4, 3, 3))
