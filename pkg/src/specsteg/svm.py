"""Linear soft-margin classifier trained by sequential minimal optimization.

Solves min_w,b 1/2 ||w||^2 + C sum_i max(0, 1 - y_i (w.x_i + b)) through its
dual with the maximal-violating-pair working-set rule. Features are min-max
scaled to [0, 1] per dimension before training; the scaling is stored on the
model and applied again at prediction time. Selection and updates are fully
deterministic for a fixed input order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KKT_TOL = 1e-6
ETA_FLOOR = 1e-12
MAX_PASSES = 200_000


@dataclass
class MarginModel:
    weights: np.ndarray  # acts on scaled features
    bias: float
    C: float
    window_sizes: tuple
    feature_min: np.ndarray
    feature_max: np.ndarray

    def scale(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        span = self.feature_max - self.feature_min
        safe = np.where(span > 0, span, 1.0)
        scaled = (x - self.feature_min) / safe
        return np.where(span > 0, scaled, 0.0)

    def decision(self, x: np.ndarray) -> np.ndarray:
        return self.scale(x) @ self.weights + self.bias


def svm_train(features: np.ndarray, labels: np.ndarray, C: float = 1.0,
              window_sizes: tuple = (), tol: float = KKT_TOL) -> MarginModel:
    """Fit the margin model; labels are -1 (cover) / +1 (stego)."""
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != y.size:
        raise ValueError("features must be (n, d) with one label per row")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("training set must contain both classes")
    if not np.all(np.abs(y) == 1):
        raise ValueError("labels must be -1 or +1")

    fmin = x.min(axis=0)
    fmax = x.max(axis=0)
    span = fmax - fmin
    xs = np.where(span > 0, (x - fmin) / np.where(span > 0, span, 1.0), 0.0)

    n = xs.shape[0]
    alpha = np.zeros(n)
    w = np.zeros(xs.shape[1])
    self_k = np.einsum("ij,ij->i", xs, xs)

    for _ in range(MAX_PASSES):
        # B_t = y_t - w.x_t; the maximal violating pair brackets the bias
        b_all = y - xs @ w
        up = ((alpha < C) & (y > 0)) | ((alpha > 0) & (y < 0))
        low = ((alpha < C) & (y < 0)) | ((alpha > 0) & (y > 0))
        b_up = np.where(up, b_all, -np.inf)
        b_low = np.where(low, b_all, np.inf)
        i = int(np.argmax(b_up))
        j = int(np.argmin(b_low))
        gap = b_up[i] - b_low[j]
        if gap <= tol:
            break
        eta = self_k[i] + self_k[j] - 2.0 * float(xs[i] @ xs[j])
        d = gap / max(eta, ETA_FLOOR)
        # move along alpha_i += y_i d, alpha_j -= y_j d, clipped to the box
        lo, hi = -np.inf, np.inf
        if y[i] > 0:
            lo, hi = -alpha[i], C - alpha[i]
        else:
            lo, hi = alpha[i] - C, alpha[i]
        if y[j] > 0:
            lo, hi = max(lo, alpha[j] - C), min(hi, alpha[j])
        else:
            lo, hi = max(lo, -alpha[j]), min(hi, C - alpha[j])
        d = float(np.clip(d, lo, hi))
        if d == 0.0:
            break
        alpha[i] += y[i] * d
        alpha[j] -= y[j] * d
        w += d * (xs[i] - xs[j])

    b_all = y - xs @ w
    free = (alpha > 1e-12) & (alpha < C - 1e-12)
    if np.any(free):
        bias = float(b_all[free].mean())
    else:
        up = ((alpha < C) & (y > 0)) | ((alpha > 0) & (y < 0))
        low = ((alpha < C) & (y < 0)) | ((alpha > 0) & (y > 0))
        bias = float((np.max(np.where(up, b_all, -np.inf))
                      + np.min(np.where(low, b_all, np.inf))) / 2.0)
    return MarginModel(weights=w, bias=bias, C=C, window_sizes=tuple(window_sizes),
                       feature_min=fmin, feature_max=fmax)


def svm_predict(model: MarginModel, feature: np.ndarray):
    """Classify one fused feature; returns (label, decision value) with
    label +1 (stego) when the decision value is >= 0."""
    value = float(model.decision(feature)[0])
    return (1 if value >= 0 else -1), value


def hinge_objective(model: MarginModel, features: np.ndarray, labels: np.ndarray) -> float:
    """Primal objective of the stored model on (already raw) features."""
    y = np.asarray(labels, dtype=np.float64)
    margins = 1.0 - y * model.decision(features)
    return 0.5 * float(model.weights @ model.weights) + model.C * float(
        np.maximum(margins, 0.0).sum()
    )


def save_margin_model(model: MarginModel, path) -> None:
    """Plain-text layout: header line with C and window sizes, then the 120
    weights, the bias, and the per-dimension scaling bounds, 17 significant
    digits each."""
    with open(path, "w") as fh:
        sizes = " ".join(str(s) for s in model.window_sizes)
        fh.write(f"C {model.C:.17g} windows {sizes}\n")
        for v in model.weights:
            fh.write(f"{v:.17g}\n")
        fh.write(f"{model.bias:.17g}\n")
        for v in model.feature_min:
            fh.write(f"{v:.17g}\n")
        for v in model.feature_max:
            fh.write(f"{v:.17g}\n")


def load_margin_model(path) -> MarginModel:
    with open(path) as fh:
        header = fh.readline().split()
        if len(header) < 2 or header[0] != "C":
            raise ValueError(f"{path}: not a margin model file")
        c_value = float(header[1])
        sizes = tuple(int(s) for s in header[3:])
        rest = [float(line) for line in fh if line.strip()]
    dim = (len(rest) - 1) // 3
    if len(rest) != 3 * dim + 1:
        raise ValueError(f"{path}: malformed model body")
    return MarginModel(
        weights=np.array(rest[:dim]),
        bias=rest[dim],
        C=c_value,
        window_sizes=sizes,
        feature_min=np.array(rest[dim + 1 : 2 * dim + 1]),
        feature_max=np.array(rest[2 * dim + 1 :]),
    )
