"""Residual feature network for filtered spectrograms.

Layout: a bias-free initial 3x3 convolution lifts the 4 filtered channels to
the first channel width, then three groups of pre-activation residual units
(BN -> ReLU -> conv, twice per unit) at widths that double per group. The
first unit of the second and third group downsamples: its main branch starts
with the 3x3/stride-2 average pooling that sits between groups, and its
shortcut is a 1x1 stride-2 projection followed by BN so both branches agree
in shape. Global average pooling yields the per-window feature vector, and a
small fully connected layer produces the two-class logits.

All parameters live in plain numpy arrays; gradients are computed by the
hand-written backward passes in nnops and are exercised against central
finite differences in the test suite.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import nnops
from .errors import CodecError
from .residual_filters import FilterBank, apply_filter_bank, default_filter_bank

CHECKPOINT_MAGIC = b"SRN1"


@dataclass
class NetConfig:
    in_channels: int = 4
    channels: tuple = (10, 20, 40)
    units_per_group: int = 5
    num_classes: int = 2
    window_size: int = 0  # tag recorded in checkpoints

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) != 3:
            raise CodecError("exactly three channel widths expected")
        if self.units_per_group < 1:
            raise CodecError("need at least one residual unit per group")


def _he_normal(rng, shape, fan_in, dtype):
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape).astype(dtype)


class Workspace:
    """Shape-keyed scratch buffers so hot loops never touch fresh pages.

    Buffers are reused across steps; padded input buffers rely on their
    border staying zero, so only explicitly zeroed keys may be accumulated
    into.
    """

    def __init__(self):
        self._bufs = {}

    def take(self, key, shape, dtype, zero=False):
        arr = self._bufs.get(key)
        if arr is None or arr.shape != shape or arr.dtype != dtype:
            arr = np.zeros(shape, dtype=dtype)
            self._bufs[key] = arr
        elif zero:
            arr[:] = 0
        return arr


class Conv3x3:
    def __init__(self, c_in, c_out, rng, dtype, ws: Workspace, uid: str, stride=1):
        self.w = _he_normal(rng, (c_out, c_in, 3, 3), c_in * 9, dtype)
        self.stride = stride
        self.dw = None
        self._ws = ws
        self._uid = uid
        self._xp = None

    def forward(self, x, apply_relu=False):
        """Pads into a reused buffer (optionally fusing a preceding ReLU,
        which is bit-identical to relu-then-pad) and runs the strict kernel."""
        b, c, h, w = x.shape
        xp = self._ws.take((self._uid, "xp"), (b, c, h + 2, w + 2), x.dtype)
        center = xp[:, :, 1 : 1 + h, 1 : 1 + w]
        if apply_relu:
            np.maximum(x, 0, out=center)
        else:
            center[...] = x
        ho = (h - 1) // self.stride + 1
        wo = (w - 1) // self.stride + 1
        out = self._ws.take((self._uid, "out"), (b, self.w.shape[0], ho, wo), x.dtype)
        if self.stride == 1:
            nnops._conv3x3_s1_kernel(xp, self.w, out)
        else:
            nnops._conv3x3_s2_kernel(xp, self.w, out)
        self._xp = xp
        return out

    def backward(self, dout):
        xp = self._xp
        b, c, hp, wp = xp.shape
        self.dw = np.zeros_like(self.w)
        dx = self._ws.take((self._uid, "dx"), (b, c, hp - 2, wp - 2), xp.dtype)
        if self.stride == 1:
            nnops._conv3x3_dw_s1_kernel(xp, dout, self.dw)
            dp = self._ws.take((self._uid, "dp"),
                               (b, self.w.shape[0], dout.shape[2] + 2, dout.shape[3] + 2),
                               xp.dtype)
            dp[:, :, 1 : 1 + dout.shape[2], 1 : 1 + dout.shape[3]] = dout
            nnops._conv3x3_s1_fm_kernel(dp, nnops.transposed_kernels(self.w), dx)
        else:
            dxp = self._ws.take((self._uid, "dxp"), xp.shape, xp.dtype, zero=True)
            nnops._conv3x3_dx_s2_kernel(dxp, self.w, dout)
            nnops._conv3x3_dw_s2_kernel(xp, dout, self.dw)
            dx[...] = dxp[:, :, 1 : hp - 1, 1 : wp - 1]
        return dx


class ProjConv1x1:
    """Stride-2 pointwise projection used on downsampling shortcuts."""

    def __init__(self, c_in, c_out, rng, dtype, ws: Workspace, uid: str):
        self.w = _he_normal(rng, (c_out, c_in), c_in, dtype)
        self.dw = None
        self._ws = ws
        self._uid = uid
        self._x = None

    def forward(self, x):
        self._x = x
        return nnops.conv1x1_forward(x, self.w, stride=2)

    def backward(self, dout):
        xs = self._x[:, :, ::2, ::2]
        self.dw = np.einsum("bohw,bchw->oc", dout, xs, optimize=True).astype(self.w.dtype)
        dx = self._ws.take((self._uid, "dx"), self._x.shape, self._x.dtype, zero=True)
        dx[:, :, ::2, ::2] = np.einsum("oc,bohw->bchw", self.w, dout, optimize=True)
        self._x = None
        return dx


class BatchNorm2d:
    def __init__(self, channels, dtype, ws: Workspace, uid: str, momentum=0.9, eps=1e-5):
        self.gamma = np.ones(channels, dtype=dtype)
        self.beta = np.zeros(channels, dtype=dtype)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.zeros(channels, dtype=dtype)
        self.momentum = momentum
        self.eps = eps
        self.dgamma = None
        self.dbeta = None
        self._ws = ws
        self._uid = uid
        self._cache = None

    def forward(self, x, train):
        if train:
            mean, var = nnops._bn_stats_kernel(x)
            self.running_mean *= self.momentum
            self.running_mean += (1.0 - self.momentum) * mean.astype(self.running_mean.dtype)
            self.running_var *= self.momentum
            self.running_var += (1.0 - self.momentum) * var.astype(self.running_var.dtype)
        else:
            mean = self.running_mean.astype(np.float64)
            var = self.running_var.astype(np.float64)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        g64 = self.gamma.astype(np.float64)
        scale = (g64 * inv_std).astype(x.dtype)
        shift = (self.beta.astype(np.float64) - mean * g64 * inv_std).astype(x.dtype)
        out = self._ws.take((self._uid, "out"), x.shape, x.dtype)
        nnops._bn_affine_kernel(x, scale, shift, out)
        self._cache = (x, mean.astype(x.dtype), inv_std.astype(x.dtype)) if train else None
        return out

    def backward(self, dout):
        x, mean, inv_std = self._cache
        dx = self._ws.take((self._uid, "dx"), x.shape, x.dtype)
        dgamma = np.zeros(self.gamma.shape, dtype=np.float64)
        dbeta = np.zeros(self.gamma.shape, dtype=np.float64)
        nnops._bn_backward_kernel(x, dout, mean, inv_std, self.gamma, dx, dgamma, dbeta)
        self.dgamma = dgamma.astype(x.dtype)
        self.dbeta = dbeta.astype(x.dtype)
        self._cache = None
        return dx


class Linear:
    def __init__(self, n_in, n_out, rng, dtype):
        self.w = _he_normal(rng, (n_out, n_in), n_in, dtype)
        self.b = np.zeros(n_out, dtype=dtype)
        self.dw = None
        self.db = None
        self._x = None

    def forward(self, x):
        self._x = x
        return nnops.linear_forward(x, self.w, self.b)

    def backward(self, dout):
        dx, self.dw, self.db = nnops.linear_backward(dout, self._x, self.w)
        self._x = None
        return dx


class ResidualUnit:
    """Identity-shortcut unit: out = conv2(relu(bn2(conv1(relu(bn1(x)))))) + x."""

    def __init__(self, channels, rng, dtype, ws: Workspace, uid: str):
        self.bn1 = BatchNorm2d(channels, dtype, ws, f"{uid}.bn1")
        self.conv1 = Conv3x3(channels, channels, rng, dtype, ws, f"{uid}.conv1")
        self.bn2 = BatchNorm2d(channels, dtype, ws, f"{uid}.bn2")
        self.conv2 = Conv3x3(channels, channels, rng, dtype, ws, f"{uid}.conv2")
        self._ws = ws
        self._uid = uid
        self._a1 = None
        self._a2 = None

    def forward(self, x, train):
        a1 = self.bn1.forward(x, train)
        self._a1 = a1
        h = self.conv1.forward(a1, apply_relu=True)
        a2 = self.bn2.forward(h, train)
        self._a2 = a2
        main = self.conv2.forward(a2, apply_relu=True)
        out = self._ws.take((self._uid, "sum"), main.shape, main.dtype)
        np.add(main, x, out=out)
        return out

    def backward(self, dout):
        d = self.conv2.backward(dout)
        m2 = self._ws.take((self._uid, "m2"), d.shape, d.dtype)
        nnops._relu_mask_into(d, self._a2, m2)
        d = self.conv1.backward(self.bn2.backward(m2))
        m1 = self._ws.take((self._uid, "m1"), d.shape, d.dtype)
        nnops._relu_mask_into(d, self._a1, m1)
        d = self.bn1.backward(m1)
        dsum = self._ws.take((self._uid, "dsum"), d.shape, d.dtype)
        np.add(d, dout, out=dsum)
        self._a1 = self._a2 = None
        return dsum

    def layers(self):
        return [("bn1", self.bn1), ("conv1", self.conv1), ("bn2", self.bn2), ("conv2", self.conv2)]


class TransitionUnit:
    """Downsampling unit opening a wider group.

    Main branch: between-group 3x3/stride-2 average pool, then the usual
    BN -> ReLU -> conv pair with the channel raise in the first conv.
    Shortcut: 1x1 stride-2 projection + BN on the unpooled input, so it
    bypasses the pooling yet lands on the same shape.
    """

    def __init__(self, c_in, c_out, rng, dtype, ws: Workspace, uid: str):
        self.bn1 = BatchNorm2d(c_in, dtype, ws, f"{uid}.bn1")
        self.conv1 = Conv3x3(c_in, c_out, rng, dtype, ws, f"{uid}.conv1")
        self.bn2 = BatchNorm2d(c_out, dtype, ws, f"{uid}.bn2")
        self.conv2 = Conv3x3(c_out, c_out, rng, dtype, ws, f"{uid}.conv2")
        self.proj = ProjConv1x1(c_in, c_out, rng, dtype, ws, f"{uid}.proj")
        self.proj_bn = BatchNorm2d(c_out, dtype, ws, f"{uid}.proj_bn")
        self._ws = ws
        self._uid = uid
        self._a1 = None
        self._a2 = None
        self._in_shape = None

    def forward(self, x, train):
        self._in_shape = x.shape
        b, c, h, w = x.shape
        ho, wo = (h - 1) // 2 + 1, (w - 1) // 2 + 1
        xp = self._ws.take((self._uid, "poolpad"), (b, c, h + 2, w + 2), x.dtype)
        xp[:, :, 1 : 1 + h, 1 : 1 + w] = x
        pooled = self._ws.take((self._uid, "pool"), (b, c, ho, wo), x.dtype, zero=True)
        for ky in range(3):
            for kx in range(3):
                pooled += xp[:, :, ky : ky + 2 * ho - 1 : 2, kx : kx + 2 * wo - 1 : 2]
        pooled *= x.dtype.type(1.0 / 9.0)
        a1 = self.bn1.forward(pooled, train)
        self._a1 = a1
        hmid = self.conv1.forward(a1, apply_relu=True)
        a2 = self.bn2.forward(hmid, train)
        self._a2 = a2
        main = self.conv2.forward(a2, apply_relu=True)
        short = self.proj_bn.forward(self.proj.forward(x), train)
        out = self._ws.take((self._uid, "sum"), main.shape, main.dtype)
        np.add(main, short, out=out)
        return out

    def backward(self, dout):
        d = self.conv2.backward(dout)
        m2 = self._ws.take((self._uid, "m2"), d.shape, d.dtype)
        nnops._relu_mask_into(d, self._a2, m2)
        d = self.conv1.backward(self.bn2.backward(m2))
        m1 = self._ws.take((self._uid, "m1"), d.shape, d.dtype)
        nnops._relu_mask_into(d, self._a1, m1)
        d = self.bn1.backward(m1)
        b, c, h, w = self._in_shape
        ho, wo = d.shape[2], d.shape[3]
        dxp = self._ws.take((self._uid, "dpoolpad"), (b, c, h + 2, w + 2), d.dtype, zero=True)
        share = self._ws.take((self._uid, "dshare"), d.shape, d.dtype)
        np.multiply(d, d.dtype.type(1.0 / 9.0), out=share)
        for ky in range(3):
            for kx in range(3):
                dxp[:, :, ky : ky + 2 * ho - 1 : 2, kx : kx + 2 * wo - 1 : 2] += share
        dshort = self.proj.backward(self.proj_bn.backward(dout))
        dx = self._ws.take((self._uid, "dsum"), self._in_shape, d.dtype)
        dx[...] = dxp[:, :, 1 : 1 + h, 1 : 1 + w]
        dx += dshort
        self._a1 = self._a2 = None
        return dx

    def layers(self):
        return [
            ("bn1", self.bn1), ("conv1", self.conv1), ("bn2", self.bn2), ("conv2", self.conv2),
            ("proj", self.proj), ("proj_bn", self.proj_bn),
        ]


class ResidualNet:
    """The full feature network plus its fixed residual filter bank."""

    def __init__(self, config: NetConfig, seed: int = 0, dtype=np.float64,
                 bank: FilterBank | None = None):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.bank = bank if bank is not None else default_filter_bank()
        self._ws = Workspace()
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed])))
        c0, c1, c2 = config.channels
        self.init_conv = Conv3x3(config.in_channels, c0, rng, self.dtype, self._ws, "init")
        self.groups = []
        widths = [(None, c0), (c0, c1), (c1, c2)]
        for gi, (c_in, c_out) in enumerate(widths):
            units = []
            for ui in range(config.units_per_group):
                uid = f"g{gi}.u{ui}"
                if gi > 0 and ui == 0:
                    units.append(TransitionUnit(c_in, c_out, rng, self.dtype, self._ws, uid))
                else:
                    units.append(ResidualUnit(c_out, rng, self.dtype, self._ws, uid))
            self.groups.append(units)
        self.fc = Linear(c2, config.num_classes, rng, self.dtype)

    # --- parameter bookkeeping -------------------------------------------------

    def _named_layers(self):
        yield "init_conv", self.init_conv
        for gi, units in enumerate(self.groups):
            for ui, unit in enumerate(units):
                for lname, layer in unit.layers():
                    yield f"g{gi}.u{ui}.{lname}", layer
        yield "fc", self.fc

    def parameters(self):
        """(name, array) pairs in declaration order; the checkpoint contract."""
        out = []
        for prefix, layer in self._named_layers():
            if isinstance(layer, BatchNorm2d):
                out.append((f"{prefix}.gamma", layer.gamma))
                out.append((f"{prefix}.beta", layer.beta))
            elif isinstance(layer, Linear):
                out.append((f"{prefix}.w", layer.w))
                out.append((f"{prefix}.b", layer.b))
            else:
                out.append((f"{prefix}.w", layer.w))
        return out

    def gradients(self):
        out = []
        for prefix, layer in self._named_layers():
            if isinstance(layer, BatchNorm2d):
                out.append((f"{prefix}.gamma", layer.dgamma))
                out.append((f"{prefix}.beta", layer.dbeta))
            elif isinstance(layer, Linear):
                out.append((f"{prefix}.w", layer.dw))
                out.append((f"{prefix}.b", layer.db))
            else:
                out.append((f"{prefix}.w", layer.dw))
        return out

    def batchnorm_layers(self):
        return [(name, layer) for name, layer in self._named_layers()
                if isinstance(layer, BatchNorm2d)]

    def parameter_count(self) -> int:
        return sum(arr.size for _, arr in self.parameters())

    def residual_conv_count(self) -> int:
        n = 0
        for units in self.groups:
            for unit in units:
                n += sum(1 for _, layer in unit.layers() if isinstance(layer, Conv3x3))
        return n

    # --- computation -----------------------------------------------------------

    def forward(self, x, train: bool = False, apply_spm: bool = False):
        """Run the network; returns (logits, features).

        `x` is (B, 4, H, W) already filtered, or raw spectrogram values of
        shape (B, H, W) / (B, 1, H, W) with apply_spm=True.
        """
        x = np.asarray(x)
        if apply_spm:
            if x.ndim == 4:
                x = x[:, 0]
            x = np.concatenate([apply_filter_bank(sample, self.bank) for sample in x], axis=0)
        x = np.ascontiguousarray(x, dtype=self.dtype)
        if x.ndim != 4 or x.shape[1] != self.config.in_channels:
            raise CodecError(f"expected (B, {self.config.in_channels}, H, W) input, got {x.shape}")
        h = self.init_conv.forward(x)
        for units in self.groups:
            for unit in units:
                h = unit.forward(h, train)
        self._feat_shape = h.shape
        features = nnops.global_avg_pool_forward(h)
        logits = self.fc.forward(features)
        return logits, features

    def backward(self, dlogits):
        d = self.fc.backward(np.ascontiguousarray(dlogits, dtype=self.dtype))
        d = nnops.global_avg_pool_backward(d, self._feat_shape)
        for units in reversed(self.groups):
            for unit in reversed(units):
                d = unit.backward(d)
        return self.init_conv.backward(d)


def loss_and_grads(net: ResidualNet, x, labels, weight_decay: float = 2e-4):
    """Mean cross-entropy plus L2 penalty on the weight matrices.

    Fills every layer's gradient buffers by reverse-mode differentiation and
    returns (loss, logits); gradients are read back via net.gradients().
    """
    logits, _ = net.forward(x, train=True)
    loss, dlogits = nnops.cross_entropy(logits, np.asarray(labels))
    decay = _decay_layers(net)
    if weight_decay:
        loss += 0.5 * weight_decay * sum(float((layer.w ** 2).sum()) for layer in decay)
    net.backward(dlogits)
    if weight_decay:
        for layer in decay:
            layer.dw += weight_decay * layer.w
    return loss, logits


def _decay_layers(net: ResidualNet):
    return [layer for _, layer in net._named_layers() if not isinstance(layer, BatchNorm2d)]


def decay_names(net: ResidualNet) -> set:
    """Names of parameters carrying L2 decay (the .w of conv/proj/fc layers)."""
    return {f"{name}.w" for name, layer in net._named_layers()
            if not isinstance(layer, BatchNorm2d)}


def classify(net: ResidualNet, spec, threshold: float = 0.5):
    """Label one spectrogram; ties at the threshold count as stego."""
    filtered = apply_filter_bank(spec, net.bank)
    logits, _ = net.forward(filtered, train=False)
    p_stego = float(nnops.softmax(logits.astype(np.float64))[0, 1])
    label = "stego" if p_stego >= threshold else "cover"
    return label, p_stego


def batch_features(net: ResidualNet, specs, batch_size: int = 16) -> np.ndarray:
    """Per-window feature vectors for a list of spectrograms (inference mode)."""
    feats = []
    for start in range(0, len(specs), batch_size):
        chunk = specs[start : start + batch_size]
        x = np.concatenate([apply_filter_bank(s, net.bank) for s in chunk], axis=0)
        _, features = net.forward(x, train=False)
        feats.append(features.astype(np.float64))
    return np.concatenate(feats, axis=0)


# --- checkpoint io ------------------------------------------------------------


def save_checkpoint(net: ResidualNet, path, adam_state=None) -> None:
    """Binary layout: "SRN1", config block (u32: window, in_ch, units,
    channels x3, classes), u32 tensor count, parameters in declaration order
    as float64, u8 adam flag (+ step u64, lr f64, then first/second moments),
    then BN running means/variances in declaration order."""
    params = net.parameters()
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        cfg = net.config
        fh.write(struct.pack("<7I", cfg.window_size, cfg.in_channels, cfg.units_per_group,
                             *cfg.channels, cfg.num_classes))
        fh.write(struct.pack("<I", len(params)))
        for _, arr in params:
            fh.write(arr.astype("<f8").tobytes())
        if adam_state is None:
            fh.write(struct.pack("<B", 0))
        else:
            fh.write(struct.pack("<B", 1))
            fh.write(struct.pack("<Qd", adam_state.step, adam_state.lr))
            for name, arr in params:
                fh.write(adam_state.m[name].astype("<f8").tobytes())
            for name, arr in params:
                fh.write(adam_state.v[name].astype("<f8").tobytes())
        for _, bn in net.batchnorm_layers():
            fh.write(bn.running_mean.astype("<f8").tobytes())
            fh.write(bn.running_var.astype("<f8").tobytes())


def load_checkpoint(path, dtype=np.float64):
    """Rebuild a network (and optional Adam state) from a checkpoint."""
    from .training import AdamState  # local import to avoid a cycle

    with open(path, "rb") as fh:
        if fh.read(4) != CHECKPOINT_MAGIC:
            raise CodecError(f"{path}: not a checkpoint file")
        window, in_ch, units, c0, c1, c2, classes = struct.unpack("<7I", fh.read(28))
        config = NetConfig(in_channels=in_ch, channels=(c0, c1, c2), units_per_group=units,
                           num_classes=classes, window_size=window)
        net = ResidualNet(config, seed=0, dtype=dtype)
        params = net.parameters()
        (n_tensors,) = struct.unpack("<I", fh.read(4))
        if n_tensors != len(params):
            raise CodecError(f"{path}: checkpoint holds {n_tensors} tensors, "
                             f"config implies {len(params)}")
        for _, arr in params:
            buf = fh.read(8 * arr.size)
            if len(buf) < 8 * arr.size:
                raise CodecError(f"{path}: truncated parameter block")
            arr[...] = np.frombuffer(buf, dtype="<f8").reshape(arr.shape).astype(dtype)
        (has_adam,) = struct.unpack("<B", fh.read(1))
        adam = None
        if has_adam:
            step, lr = struct.unpack("<Qd", fh.read(16))
            adam = AdamState(lr=lr)
            adam.step = step
            for name, arr in params:
                buf = fh.read(8 * arr.size)
                adam.m[name] = np.frombuffer(buf, dtype="<f8").reshape(arr.shape).astype(dtype)
            for name, arr in params:
                buf = fh.read(8 * arr.size)
                adam.v[name] = np.frombuffer(buf, dtype="<f8").reshape(arr.shape).astype(dtype)
        for _, bn in net.batchnorm_layers():
            n = bn.running_mean.size
            bn.running_mean[...] = np.frombuffer(fh.read(8 * n), dtype="<f8").astype(dtype)
            bn.running_var[...] = np.frombuffer(fh.read(8 * n), dtype="<f8").astype(dtype)
    return net, adam
