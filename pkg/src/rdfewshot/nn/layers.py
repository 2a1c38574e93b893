"""Layers for the embedding network: conv, batchnorm, pooling, linear.

Activations are laid out channels-last (N, H, W, C): per-channel batchnorm
and the channel-vector local descriptors then work on the contiguous last
axis, and the im2col copies feeding the convolution GEMM move whole channel
runs instead of single floats.  Convolution runs as im2col + GEMM with an
explicit col2im backward; pooling and batchnorm carry hand-derived backward
passes.  Shape mismatches are reported eagerly with the layer name.
"""

from __future__ import annotations

import numpy as np

from ..exceptions import ConfigError
from .tensor import Tensor, custom_op, relu as _relu, sigmoid as _sigmoid, matmul, add, transpose

_EPS_BN = 1e-5


def kaiming_uniform(shape, fan_in: int, rng: np.random.Generator, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """(N, H, W, C) -> rows (N*OH*OW, kh*kw*C), kernel-position major.

    Built with one strided copy per kernel position: each moves whole
    channel runs, which is much kinder to a single core than transposing a
    sliding-window view.
    """
    n, h, w, c = x.shape
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = np.empty((n, oh, ow, kh, kw, c), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = x[:, i:i + oh * stride:stride,
                                       j:j + ow * stride:stride, :]
    return cols.reshape(n * oh * ow, kh * kw * c), oh, ow


def _col2im(gcols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int,
            oh: int, ow: int) -> np.ndarray:
    n, h, w, c = x_shape
    gx = np.zeros((n, h + 2 * pad, w + 2 * pad, c), dtype=gcols.dtype)
    g6 = gcols.reshape(n, oh, ow, kh, kw, c)
    for i in range(kh):
        for j in range(kw):
            gx[:, i:i + oh * stride:stride, j:j + ow * stride:stride, :] += g6[:, :, :, i, j, :]
    if pad:
        gx = gx[:, pad:-pad, pad:-pad, :]
    return gx


class Conv2d:
    """3x3-style convolution, no dilation; bias optional (off when batchnorm
    follows).  Weights are stored (out, in, kh, kw) regardless of the
    activation layout."""

    def __init__(self, in_channels: int, out_channels: int, kernel: int = 3,
                 stride: int = 1, pad: int = 1, bias: bool = False,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride, self.pad = kernel, stride, pad
        fan_in = in_channels * kernel * kernel
        self.weight = Tensor(kaiming_uniform(
            (out_channels, in_channels, kernel, kernel), fan_in, rng, dtype),
            requires_grad=True)
        self.bias = Tensor(np.zeros(out_channels, dtype=dtype), requires_grad=True) \
            if bias else None

    def forward(self, x: Tensor, train: bool = True) -> Tensor:
        n, h, w, c = x.data.shape
        if c != self.in_channels:
            raise ConfigError(
                f"Conv2d expected {self.in_channels} input channels, got {c} "
                f"(input shape {x.data.shape})")
        k, s, p = self.kernel, self.stride, self.pad
        cols, oh, ow = _im2col(x.data, k, k, s, p)
        # rows are (i, j, c)-ordered, so arrange the kernel matrix to match
        wmat = np.ascontiguousarray(
            self.weight.data.transpose(2, 3, 1, 0)).reshape(-1, self.out_channels)
        out = cols @ wmat
        if self.bias is not None:
            out += self.bias.data
        out = out.reshape(n, oh, ow, self.out_channels)
        parents = (x, self.weight) + ((self.bias,) if self.bias is not None else ())

        def back(g):
            gmat = g.reshape(-1, self.out_channels)
            gw = (cols.T @ gmat).reshape(k, k, self.in_channels, self.out_channels) \
                .transpose(3, 2, 0, 1)
            gx = None
            if x.requires_grad:
                gcols = gmat @ wmat.T
                gx = _col2im(gcols, x.data.shape, k, k, s, p, oh, ow)
            if self.bias is not None:
                return gx, gw, gmat.sum(axis=0)
            return gx, gw
        return custom_op(out, parents, back)

    def params(self, prefix: str) -> list:
        out = [(f"{prefix}.weight", self.weight)]
        if self.bias is not None:
            out.append((f"{prefix}.bias", self.bias))
        return out

    def buffers(self, prefix: str) -> list:
        return []


class BatchNorm2d:
    """Per-channel normalization; batch statistics in train mode, running in
    eval.  Channels-last, so scale/shift broadcast over the trailing axis."""

    def __init__(self, channels: int, momentum: float = 0.1, dtype=np.float32):
        self.channels = channels
        self.momentum = momentum
        self.gamma = Tensor(np.ones(channels, dtype=dtype), requires_grad=True)
        self.beta = Tensor(np.zeros(channels, dtype=dtype), requires_grad=True)
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def forward(self, x: Tensor, train: bool = True) -> Tensor:
        if x.data.ndim != 4 or x.data.shape[3] != self.channels:
            raise ConfigError(
                f"BatchNorm2d({self.channels}) got input shape {x.data.shape}")
        axes = (0, 1, 2)
        count = x.data.size // self.channels
        xd = x.data
        flat = xd.reshape(-1, self.channels)
        if train:
            mean = flat.mean(axis=0)
            sq = np.einsum("nc,nc->c", flat, flat) / count
            var = np.maximum(sq - mean * mean, 0.0)
            unbiased = var * count / max(count - 1, 1)
            self.running_mean += self.momentum * (mean - self.running_mean)
            self.running_var += self.momentum * (unbiased - self.running_var)
        else:
            mean, var = self.running_mean, self.running_var
        invstd = 1.0 / np.sqrt(var + _EPS_BN)
        # fused y = x*a + b; xhat is rebuilt only if backward runs
        a = (self.gamma.data * invstd).astype(xd.dtype)
        b = (self.beta.data - mean * a).astype(xd.dtype)
        out = xd * a
        out += b

        def back(g):
            xhat = (xd - mean) * invstd
            gg = np.einsum("nc,nc->c", g.reshape(-1, self.channels),
                           xhat.reshape(-1, self.channels))
            gb = g.sum(axis=axes)
            if train:
                gx = g * self.gamma.data
                gx -= (self.gamma.data * gb) / count
                gx -= xhat * ((self.gamma.data * gg) / count)
                gx *= invstd
            else:
                gx = g * a
            return gx, gg, gb
        return custom_op(out, (x, self.gamma, self.beta), back)

    def params(self, prefix: str) -> list:
        return [(f"{prefix}.gamma", self.gamma), (f"{prefix}.beta", self.beta)]

    def buffers(self, prefix: str) -> list:
        return [(f"{prefix}.running_mean", self.running_mean),
                (f"{prefix}.running_var", self.running_var)]

    def set_buffer(self, name: str, value: np.ndarray) -> None:
        if name.endswith("running_mean"):
            self.running_mean = value.astype(self.running_mean.dtype)
        elif name.endswith("running_var"):
            self.running_var = value.astype(self.running_var.dtype)
        else:
            raise ConfigError(f"unknown batchnorm buffer {name!r}")


class ReLU:
    def forward(self, x: Tensor, train: bool = True) -> Tensor:
        return _relu(x)

    def params(self, prefix: str) -> list:
        return []

    def buffers(self, prefix: str) -> list:
        return []


class Sigmoid:
    def forward(self, x: Tensor, train: bool = True) -> Tensor:
        return _sigmoid(x)

    def params(self, prefix: str) -> list:
        return []

    def buffers(self, prefix: str) -> list:
        return []


class MaxPool2d:
    """Non-overlapping max pooling (kernel == stride, dims must divide).

    The 2x2 case routes gradients with boolean comparisons instead of
    materializing windows; ties go to the earlier position.
    """

    def __init__(self, kernel: int = 2, stride: int | None = None):
        stride = stride or kernel
        if stride != kernel:
            raise ConfigError("MaxPool2d supports kernel == stride only")
        self.kernel = kernel

    def forward(self, x: Tensor, train: bool = True) -> Tensor:
        n, h, w, c = x.data.shape
        k = self.kernel
        if h % k or w % k:
            raise ConfigError(f"MaxPool2d({k}) needs divisible dims, got {h}x{w}")
        if k == 2:
            return self._forward2(x)
        return self._forward_generic(x)

    def _forward2(self, x: Tensor) -> Tensor:
        d = x.data
        rows_a, rows_b = d[:, 0::2], d[:, 1::2]
        rb = rows_b > rows_a
        m1 = np.where(rb, rows_b, rows_a)
        cols_a, cols_b = m1[:, :, 0::2], m1[:, :, 1::2]
        cb = cols_b > cols_a
        out = np.where(cb, cols_b, cols_a)

        def back(g):
            gm1 = np.zeros_like(m1)
            gm1[:, :, 0::2] = np.where(cb, 0, g)
            gm1[:, :, 1::2] = np.where(cb, g, 0)
            gx = np.zeros_like(d)
            gx[:, 0::2] = np.where(rb, 0, gm1)
            gx[:, 1::2] = np.where(rb, gm1, 0)
            return (gx,)
        return custom_op(out, (x,), back)

    def _forward_generic(self, x: Tensor) -> Tensor:
        n, h, w, c = x.data.shape
        k = self.kernel
        oh, ow = h // k, w // k
        windows = x.data.reshape(n, oh, k, ow, k, c).transpose(0, 1, 3, 5, 2, 4) \
            .reshape(n, oh, ow, c, k * k)
        arg = windows.argmax(axis=-1)
        out = np.take_along_axis(windows, arg[..., None], axis=-1)[..., 0]

        def back(g):
            gw = np.zeros_like(windows)
            np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
            gx = gw.reshape(n, oh, ow, c, k, k).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)
            return (gx,)
        return custom_op(out, (x,), back)

    def params(self, prefix: str) -> list:
        return []

    def buffers(self, prefix: str) -> list:
        return []


class Linear:
    """Fully connected layer y = x W^T (+ b)."""

    def __init__(self, in_features: int, out_features: int, bias: bool = True,
                 rng: np.random.Generator | None = None, dtype=np.float32):
        rng = rng or np.random.default_rng(0)
        self.in_features, self.out_features = in_features, out_features
        self.weight = Tensor(kaiming_uniform((out_features, in_features),
                                             in_features, rng, dtype), requires_grad=True)
        self.bias = Tensor(np.zeros(out_features, dtype=dtype), requires_grad=True) \
            if bias else None

    def forward(self, x: Tensor, train: bool = True) -> Tensor:
        if x.data.shape[-1] != self.in_features:
            raise ConfigError(
                f"Linear expected {self.in_features} features, got shape {x.data.shape}")
        out = matmul(x, transpose(self.weight))
        if self.bias is not None:
            out = add(out, self.bias)
        return out

    def params(self, prefix: str) -> list:
        out = [(f"{prefix}.weight", self.weight)]
        if self.bias is not None:
            out.append((f"{prefix}.bias", self.bias))
        return out

    def buffers(self, prefix: str) -> list:
        return []


def softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """Plain numpy softmax, stabilized by max subtraction."""
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log softmax probability of the true classes.

    ``logits`` is (n, n_classes) or a single (n_classes,) vector; ``labels``
    an int array / int.  Stabilized by max subtraction.
    """
    squeeze = logits.data.ndim == 1
    z = logits.data[None, :] if squeeze else logits.data
    y = np.atleast_1d(np.asarray(labels, dtype=np.intp))
    n, c = z.shape
    if y.shape != (n,):
        raise ConfigError(f"labels shape {y.shape} does not match logits {z.shape}")
    if y.min() < 0 or y.max() >= c:
        raise ConfigError(f"label out of range [0, {c}) in {y}")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    losses = lse - shifted[np.arange(n), y]
    out = np.asarray(losses.mean(), dtype=logits.data.dtype)

    def back(g):
        p = softmax(z, axis=1)
        p[np.arange(n), y] -= 1.0
        gz = (float(g) / n) * p
        return (gz[0] if squeeze else gz,)
    return custom_op(out, (logits,), back)
