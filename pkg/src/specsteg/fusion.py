"""Multi-window feature fusion, detection metrics, and the feature file format."""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import CodecError

FEATURE_DIM = 40
FEATURE_MAGIC = b"FTR1"
COVER, STEGO = -1, 1


@dataclass
class FusedFeature:
    vector: np.ndarray  # (120,) three 40-d blocks, largest window first
    window_sizes: tuple
    label: int | None = None  # -1 cover, +1 stego

    def __post_init__(self):
        self.vector = np.ascontiguousarray(self.vector, dtype=np.float64)
        if self.vector.shape != (3 * FEATURE_DIM,):
            raise CodecError(f"fused vector must be {3 * FEATURE_DIM}-d")
        if self.label not in (None, COVER, STEGO):
            raise CodecError(f"label must be -1/+1, got {self.label}")


def fuse(features, window_sizes, label: int | None = None) -> FusedFeature:
    """Concatenate three per-window vectors in descending window-size order.

    Input order does not matter; blocks are sorted by their window size.
    """
    if len(features) != 3 or len(window_sizes) != 3:
        raise CodecError("exactly three per-window features required")
    if len(set(window_sizes)) != 3:
        raise CodecError(f"window sizes must be distinct, got {window_sizes}")
    blocks = []
    for n, feat in sorted(zip(window_sizes, features), key=lambda p: -p[0]):
        feat = np.asarray(feat, dtype=np.float64).ravel()
        if feat.shape != (FEATURE_DIM,):
            raise CodecError(f"per-window feature must be {FEATURE_DIM}-d, got {feat.shape}")
        blocks.append(feat)
    ordered = tuple(sorted(window_sizes, reverse=True))
    return FusedFeature(vector=np.concatenate(blocks), window_sizes=ordered, label=label)


def metrics(predictions, labels) -> tuple[float, float, float]:
    """(TPR, TNR, ACC) with stego = +1 and cover = -1."""
    pred = np.asarray(predictions)
    lab = np.asarray(labels)
    if pred.shape != lab.shape:
        raise CodecError("predictions and labels must align")
    stego = lab == STEGO
    cover = lab == COVER
    tpr = float((pred[stego] == STEGO).mean()) if stego.any() else float("nan")
    tnr = float((pred[cover] == COVER).mean()) if cover.any() else float("nan")
    acc = float((pred == lab).mean())
    return tpr, tnr, acc


def save_features(path, vectors: np.ndarray, labels: np.ndarray, window_sizes) -> None:
    """Binary layout: "FTR1", u32 rows, u32 dim, 3 x u32 window sizes, then
    row-major float32 values followed by one int8 label per row."""
    vectors = np.asarray(vectors, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int8)
    if vectors.ndim != 2 or vectors.shape[0] != labels.size:
        raise CodecError("need one label per feature row")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", vectors.shape[0], vectors.shape[1]))
        fh.write(struct.pack("<III", *[int(s) for s in window_sizes]))
        fh.write(vectors.astype("<f4").tobytes())
        fh.write(labels.tobytes())


def load_features(path):
    with open(path, "rb") as fh:
        if fh.read(4) != FEATURE_MAGIC:
            raise CodecError(f"{path}: not a feature file")
        rows, dim = struct.unpack("<II", fh.read(8))
        sizes = struct.unpack("<III", fh.read(12))
        data = fh.read(4 * rows * dim)
        if len(data) < 4 * rows * dim:
            raise CodecError(f"{path}: truncated feature block")
        labels = np.frombuffer(fh.read(rows), dtype=np.int8)
    vectors = np.frombuffer(data, dtype="<f4").reshape(rows, dim).astype(np.float64)
    return vectors, labels.astype(np.int64), sizes


def export_features_csv(path, vectors: np.ndarray, labels: np.ndarray) -> None:
    header = ",".join(f"f{i}" for i in range(vectors.shape[1])) + ",label"
    body = np.column_stack([vectors, labels])
    np.savetxt(path, body, delimiter=",", header=header, comments="")
