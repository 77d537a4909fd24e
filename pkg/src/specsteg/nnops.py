"""Array kernels for the feature network: convolution, pooling,
normalization, activation, and the softmax head, with hand-written
reverse-mode gradients.

The 3x3 convolutions are the hot path and run through numba-compiled loops.
Accumulation order is part of the forward contract so results are
reproducible and checkable against a straight loop evaluation: for each
output cell the three horizontal taps are summed left to right, and those
row sums accumulate over kernel rows within each input channel, channels in
ascending order. Gradient kernels are free to reassociate (they are
validated against finite differences, not bit equality).
"""

from __future__ import annotations

import numpy as np
from numba import njit


def pad2d(x: np.ndarray, pad: int) -> np.ndarray:
    b, c, h, w = x.shape
    out = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    out[:, :, pad : pad + h, pad : pad + w] = x
    return out


@njit(cache=True)
def _conv3x3_s1_kernel(xp, w, out):
    n_b, n_ci, _, _ = xp.shape
    n_co = w.shape[0]
    n_y = out.shape[2]
    n_t = out.shape[3]
    acc = np.empty(n_t, dtype=xp.dtype)
    for b in range(n_b):
        for co in range(n_co):
            for y in range(n_y):
                for t in range(n_t):
                    acc[t] = 0.0
                for ci in range(n_ci):
                    for ky in range(3):
                        row = xp[b, ci, y + ky]
                        w0 = w[co, ci, ky, 0]
                        w1 = w[co, ci, ky, 1]
                        w2 = w[co, ci, ky, 2]
                        for t in range(n_t):
                            acc[t] += w0 * row[t] + w1 * row[t + 1] + w2 * row[t + 2]
                for t in range(n_t):
                    out[b, co, y, t] = acc[t]


@njit(cache=True)
def _conv3x3_s2_kernel(xp, w, out):
    n_b, n_ci, _, _ = xp.shape
    n_co = w.shape[0]
    n_y = out.shape[2]
    n_t = out.shape[3]
    acc = np.empty(n_t, dtype=xp.dtype)
    for b in range(n_b):
        for co in range(n_co):
            for y in range(n_y):
                for t in range(n_t):
                    acc[t] = 0.0
                for ci in range(n_ci):
                    for ky in range(3):
                        row = xp[b, ci, 2 * y + ky]
                        w0 = w[co, ci, ky, 0]
                        w1 = w[co, ci, ky, 1]
                        w2 = w[co, ci, ky, 2]
                        for t in range(n_t):
                            acc[t] += w0 * row[2 * t] + w1 * row[2 * t + 1] + w2 * row[2 * t + 2]
                for t in range(n_t):
                    out[b, co, y, t] = acc[t]


@njit(cache=True, fastmath=True)
def _conv3x3_s1_fm_kernel(xp, w, out):
    """Fastmath twin of the strict forward kernel, for gradient paths."""
    n_b, n_ci, _, _ = xp.shape
    n_co = w.shape[0]
    n_y = out.shape[2]
    n_t = out.shape[3]
    acc = np.empty(n_t, dtype=xp.dtype)
    for b in range(n_b):
        for co in range(n_co):
            for y in range(n_y):
                for t in range(n_t):
                    acc[t] = 0.0
                for ci in range(n_ci):
                    for ky in range(3):
                        row = xp[b, ci, y + ky]
                        w0 = w[co, ci, ky, 0]
                        w1 = w[co, ci, ky, 1]
                        w2 = w[co, ci, ky, 2]
                        for t in range(n_t):
                            acc[t] += w0 * row[t] + w1 * row[t + 1] + w2 * row[t + 2]
                for t in range(n_t):
                    out[b, co, y, t] = acc[t]


@njit(cache=True)
def _conv3x3_dx_s2_kernel(dxp, w, dout):
    n_b, n_co, n_y, n_t = dout.shape
    n_ci = w.shape[1]
    for b in range(n_b):
        for co in range(n_co):
            for y in range(n_y):
                drow = dout[b, co, y]
                for ci in range(n_ci):
                    for ky in range(3):
                        xrow = dxp[b, ci, 2 * y + ky]
                        w0 = w[co, ci, ky, 0]
                        w1 = w[co, ci, ky, 1]
                        w2 = w[co, ci, ky, 2]
                        for t in range(n_t):
                            xrow[2 * t] += w0 * drow[t]
                            xrow[2 * t + 1] += w1 * drow[t]
                            xrow[2 * t + 2] += w2 * drow[t]


@njit(cache=True, fastmath=True)
def _conv3x3_dw_s1_kernel(xp, dout, dw):
    n_b, n_co, n_y, n_t = dout.shape
    n_ci = xp.shape[1]
    zero = xp[0, 0, 0, 0] - xp[0, 0, 0, 0]  # accumulate in the data dtype
    for b in range(n_b):
        for co in range(n_co):
            for y in range(n_y):
                drow = dout[b, co, y]
                for ci in range(n_ci):
                    for ky in range(3):
                        row = xp[b, ci, y + ky]
                        s0 = zero
                        s1 = zero
                        s2 = zero
                        for t in range(n_t):
                            d = drow[t]
                            s0 += d * row[t]
                            s1 += d * row[t + 1]
                            s2 += d * row[t + 2]
                        dw[co, ci, ky, 0] += s0
                        dw[co, ci, ky, 1] += s1
                        dw[co, ci, ky, 2] += s2


@njit(cache=True, fastmath=True)
def _conv3x3_dw_s2_kernel(xp, dout, dw):
    n_b, n_co, n_y, n_t = dout.shape
    n_ci = xp.shape[1]
    for b in range(n_b):
        for co in range(n_co):
            for y in range(n_y):
                drow = dout[b, co, y]
                for ci in range(n_ci):
                    for ky in range(3):
                        row = xp[b, ci, 2 * y + ky]
                        s0 = 0.0
                        s1 = 0.0
                        s2 = 0.0
                        for t in range(n_t):
                            d = drow[t]
                            s0 += d * row[2 * t]
                            s1 += d * row[2 * t + 1]
                            s2 += d * row[2 * t + 2]
                        dw[co, ci, ky, 0] += s0
                        dw[co, ci, ky, 1] += s1
                        dw[co, ci, ky, 2] += s2


def conv3x3_forward(x: np.ndarray, w: np.ndarray, stride: int = 1) -> np.ndarray:
    """Cross-correlate with 3x3 kernels, zero padding 1, stride 1 or 2.

    Output spatial dims are ceil(H/stride) x ceil(W/stride).
    """
    if x.shape[1] != w.shape[1]:
        raise ValueError(f"channel mismatch: input {x.shape[1]}, kernels expect {w.shape[1]}")
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    b, _, h, width = x.shape
    xp = pad2d(x, 1)
    ho = (h - 1) // stride + 1
    wo = (width - 1) // stride + 1
    out = np.empty((b, w.shape[0], ho, wo), dtype=x.dtype)
    if stride == 1:
        _conv3x3_s1_kernel(xp, w, out)
    else:
        _conv3x3_s2_kernel(xp, w, out)
    return out


def transposed_kernels(w: np.ndarray) -> np.ndarray:
    """Channel-swapped, spatially flipped kernels: the stride-1 input gradient
    is a plain correlation of the padded upstream gradient with these."""
    return np.ascontiguousarray(w.transpose(1, 0, 2, 3)[:, :, ::-1, ::-1])


def conv3x3_backward(x: np.ndarray, w: np.ndarray, dout: np.ndarray,
                     stride: int = 1) -> tuple[np.ndarray, np.ndarray]:
    b, c, h, width = x.shape
    xp = pad2d(x, 1)
    dw = np.zeros_like(w)
    dout = np.ascontiguousarray(dout)
    if stride == 1:
        _conv3x3_dw_s1_kernel(xp, dout, dw)
        dx = np.empty_like(x)
        _conv3x3_s1_fm_kernel(pad2d(dout, 1), transposed_kernels(w), dx)
    else:
        dxp = np.zeros_like(xp)
        _conv3x3_dx_s2_kernel(dxp, w, dout)
        _conv3x3_dw_s2_kernel(xp, dout, dw)
        dx = dxp[:, :, 1 : 1 + h, 1 : 1 + width]
    return dx, dw


def conv1x1_forward(x: np.ndarray, w: np.ndarray, stride: int = 2) -> np.ndarray:
    """Pointwise projection on a strided subsample of the grid (no padding)."""
    xs = x[:, :, ::stride, ::stride]
    return np.einsum("oc,bchw->bohw", w, xs, optimize=True).astype(x.dtype, copy=False)


def conv1x1_backward(x: np.ndarray, w: np.ndarray, dout: np.ndarray,
                     stride: int = 2) -> tuple[np.ndarray, np.ndarray]:
    xs = x[:, :, ::stride, ::stride]
    dw = np.einsum("bohw,bchw->oc", dout, xs, optimize=True).astype(w.dtype, copy=False)
    dx = np.zeros_like(x)
    dx[:, :, ::stride, ::stride] = np.einsum("oc,bohw->bchw", w, dout, optimize=True)
    return dx, dw


def avg_pool3_forward(x: np.ndarray) -> np.ndarray:
    """3x3 average pooling, stride 2, zero padding 1, constant divisor 9."""
    b, c, h, w = x.shape
    ho = (h - 1) // 2 + 1
    wo = (w - 1) // 2 + 1
    xp = pad2d(x, 1)
    out = np.zeros((b, c, ho, wo), dtype=x.dtype)
    for ky in range(3):
        for kx in range(3):
            out += xp[:, :, ky : ky + 2 * ho - 1 : 2, kx : kx + 2 * wo - 1 : 2]
    out *= x.dtype.type(1.0 / 9.0)
    return out


def avg_pool3_backward(dout: np.ndarray, in_shape: tuple) -> np.ndarray:
    b, c, h, w = in_shape
    ho, wo = dout.shape[2], dout.shape[3]
    share = dout * dout.dtype.type(1.0 / 9.0)
    dxp = np.zeros((b, c, h + 2, w + 2), dtype=dout.dtype)
    for ky in range(3):
        for kx in range(3):
            dxp[:, :, ky : ky + 2 * ho - 1 : 2, kx : kx + 2 * wo - 1 : 2] += share
    return dxp[:, :, 1 : 1 + h, 1 : 1 + w]


def global_avg_pool_forward(x: np.ndarray) -> np.ndarray:
    return x.mean(axis=(2, 3))


def global_avg_pool_backward(dout: np.ndarray, in_shape: tuple) -> np.ndarray:
    b, c, h, w = in_shape
    scale = dout.dtype.type(1.0 / (h * w))
    return np.broadcast_to((dout * scale)[:, :, None, None], in_shape).copy()


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(dout: np.ndarray, x: np.ndarray) -> np.ndarray:
    return dout * (x > 0)


@njit(cache=True)
def _relu_mask_into(dout, x, out):
    """out = dout gated by x > 0 (all arrays same 4-d shape, contiguous)."""
    flat_d = dout.reshape(-1)
    flat_x = x.reshape(-1)
    flat_o = out.reshape(-1)
    for i in range(flat_d.size):
        flat_o[i] = flat_d[i] if flat_x[i] > 0 else 0.0


@njit(cache=True)
def _add_into(a, b, out):
    flat_a = a.reshape(-1)
    flat_b = b.reshape(-1)
    flat_o = out.reshape(-1)
    for i in range(flat_a.size):
        flat_o[i] = flat_a[i] + flat_b[i]


@njit(cache=True, fastmath=True)
def _bn_stats_kernel(x):
    """Per-channel mean and biased variance accumulated in float64."""
    n_b, n_c, n_h, n_w = x.shape
    mean = np.zeros(n_c, dtype=np.float64)
    var = np.zeros(n_c, dtype=np.float64)
    m = n_b * n_h * n_w
    for c in range(n_c):
        s1 = 0.0
        s2 = 0.0
        for b in range(n_b):
            for h in range(n_h):
                row = x[b, c, h]
                for t in range(n_w):
                    v = row[t]
                    s1 += v
                    s2 += v * v
        mu = s1 / m
        mean[c] = mu
        var[c] = s2 / m - mu * mu
    return mean, var


@njit(cache=True, fastmath=True)
def _bn_affine_kernel(x, scale, shift, out):
    n_b, n_c, n_h, n_w = x.shape
    for b in range(n_b):
        for c in range(n_c):
            sc = scale[c]
            sh = shift[c]
            for h in range(n_h):
                row = x[b, c, h]
                orow = out[b, c, h]
                for t in range(n_w):
                    orow[t] = row[t] * sc + sh


@njit(cache=True, fastmath=True)
def _bn_backward_kernel(x, dout, mean, inv_std, gamma, dx, dgamma, dbeta):
    n_b, n_c, n_h, n_w = x.shape
    m = n_b * n_h * n_w
    for c in range(n_c):
        mu = mean[c]
        istd = inv_std[c]
        s_d = 0.0
        s_dxh = 0.0
        for b in range(n_b):
            for h in range(n_h):
                row = x[b, c, h]
                drow = dout[b, c, h]
                for t in range(n_w):
                    d = drow[t]
                    s_d += d
                    s_dxh += d * (row[t] - mu) * istd
        dgamma[c] = s_dxh
        dbeta[c] = s_d
        g = gamma[c] * istd
        c1 = s_d / m
        c2 = s_dxh / m
        for b in range(n_b):
            for h in range(n_h):
                row = x[b, c, h]
                drow = dout[b, c, h]
                orow = dx[b, c, h]
                for t in range(n_w):
                    xhat = (row[t] - mu) * istd
                    orow[t] = g * (drow[t] - c1 - xhat * c2)


def batchnorm_forward(x, gamma, beta, running_mean, running_var,
                      momentum: float = 0.9, eps: float = 1e-5, train: bool = True):
    """Per-channel normalization over (batch, height, width).

    In train mode the batch statistics are used and the running accumulators
    are updated in place: r <- momentum * r + (1 - momentum) * batch_stat.
    Inference normalizes with the running statistics (variance floored by
    eps, so zero-initialized accumulators are legal).
    """
    x = np.ascontiguousarray(x)
    if train:
        mean, var = _bn_stats_kernel(x)
        running_mean *= momentum
        running_mean += (1.0 - momentum) * mean.astype(running_mean.dtype)
        running_var *= momentum
        running_var += (1.0 - momentum) * var.astype(running_var.dtype)
    else:
        mean = running_mean.astype(np.float64)
        var = running_var.astype(np.float64)
    inv_std = 1.0 / np.sqrt(var + eps)
    scale = (gamma.astype(np.float64) * inv_std).astype(x.dtype)
    shift = (beta.astype(np.float64) - mean * gamma.astype(np.float64) * inv_std).astype(x.dtype)
    out = np.empty_like(x)
    _bn_affine_kernel(x, scale, shift, out)
    cache = (x, mean.astype(x.dtype), inv_std.astype(x.dtype), gamma)
    return out, cache


def batchnorm_backward(dout, cache):
    """Gradient of the train-mode forward (batch statistics)."""
    x, mean, inv_std, gamma = cache
    dout = np.ascontiguousarray(dout)
    dx = np.empty_like(x)
    dgamma = np.zeros(gamma.shape, dtype=np.float64)
    dbeta = np.zeros(gamma.shape, dtype=np.float64)
    _bn_backward_kernel(x, dout, mean.astype(x.dtype), inv_std.astype(x.dtype),
                        gamma, dx, dgamma, dbeta)
    return dx, dgamma.astype(x.dtype), dbeta.astype(x.dtype)


def linear_forward(x, w, b):
    return x @ w.T + b


def linear_backward(dout, x, w):
    dx = dout @ w
    dw = dout.T @ x
    db = dout.sum(axis=0)
    return dx, dw, db


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean cross-entropy and its gradient with respect to the logits."""
    z = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(z).sum(axis=1))
    n = logits.shape[0]
    loss = float(np.mean(logsumexp - z[np.arange(n), labels]))
    dlogits = softmax(logits)
    dlogits[np.arange(n), labels] -= 1.0
    dlogits /= n
    return loss, dlogits.astype(logits.dtype, copy=False)
