"""Differentiable operators used by the bias-free U-net.

Every operator takes and returns :class:`Tensor` values. None of them adds a
constant to its output, so any composition of them (with ``bf_norm`` in
inference mode) is positively homogeneous of degree one.
"""
from __future__ import annotations

import logging

import numpy as np

from .tensor import Tensor, _result, as_tensor

log = logging.getLogger(__name__)

BF_EPS = 1e-5
BF_MOMENTUM = 0.1


def _same_shape(a, b, op):
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {list(a.shape)} vs {list(b.shape)}")


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), "add", lambda g: (g, g))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), "sub", lambda g: (g, -g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    ad, bd = a.data, b.data
    return _result(ad * bd, (a, b), "mul", lambda g: (g * bd, g * ad))


def scale(a, k):
    """Multiply by a python scalar."""
    a = as_tensor(a)
    k = np.float32(k)
    return _result(a.data * k, (a,), "scale", lambda g: (g * k,))


def tsum(a):
    a = as_tensor(a)
    shape = a.shape
    return _result(np.sum(a.data, dtype=np.float64).astype(np.float32), (a,), "sum",
                   lambda g: (np.full(shape, g.reshape(()), dtype=np.float32),))


def mse_loss(pred, target):
    """Mean over all elements of (pred - target)**2."""
    pred, target = as_tensor(pred), as_tensor(target)
    _same_shape(pred, target, "mse_loss")
    diff = pred.data - target.data
    d = diff.size
    val = np.float32(np.mean(np.square(diff, dtype=np.float64)))

    def back(g):
        gd = (2.0 / d) * g.reshape(()) * diff
        return gd.astype(np.float32), (-gd).astype(np.float32)

    return _result(val, (pred, target), "mse_loss", back)


def relu(a):
    a = as_tensor(a)
    mask = a.data > 0
    return _result(np.where(mask, a.data, np.float32(0)), (a,), "relu", lambda g: (g * mask,))


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in tensors], axis=axis)

    def back(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _result(out, tuple(tensors), "concat", back)


def conv2d(x, kernel):
    """3x3 cross-correlation with zero padding of one pixel and no bias.

    ``x`` is ``[N, Cin, H, W]`` and ``kernel`` is ``[Cout, Cin, 3, 3]``.
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ValueError(f"conv2d expects 4-d input and kernel, got {list(x.shape)} and {list(kernel.shape)}")
    n, cin, h, w = x.shape
    cout, kin, kh, kw = kernel.shape
    if (kh, kw) != (3, 3):
        raise ValueError(f"conv2d supports 3x3 kernels only, got {kh}x{kw}")
    if kin != cin:
        raise ValueError(f"conv2d: input has {cin} channels but kernel expects {kin}")

    # Channel-major, zero-padded, batch folded into one flat axis: every kernel
    # tap then reads a contiguous slice and the conv is 9 plain GEMMs. Rows
    # and columns computed over the padding are discarded.
    hp, wp = h + 2, w + 2
    span = n * hp * wp
    xp = np.zeros((cin, span + 2 * wp + 2), dtype=np.float32)
    xp[:, :span].reshape(cin, n, hp, wp)[:, :, 1:-1, 1:-1] = x.data.transpose(1, 0, 2, 3)
    taps = np.ascontiguousarray(kernel.data.transpose(2, 3, 0, 1))  # [3, 3, Cout, Cin]
    acc = np.zeros((cout, span), dtype=np.float32)
    for ky in range(3):
        for kx in range(3):
            off = ky * wp + kx
            acc += taps[ky, kx] @ xp[:, off:off + span]
    out = acc.reshape(cout, n, hp, wp)[:, :, :h, :w].transpose(1, 0, 2, 3)

    def back(g):
        gf = np.zeros((cout, n, hp, wp), dtype=np.float32)
        gf[:, :, :h, :w] = g.transpose(1, 0, 2, 3)
        gf = gf.reshape(cout, span)
        gk = np.empty(kernel.shape, dtype=np.float32) if kernel.requires_grad else None
        dxp = np.zeros_like(xp) if x.requires_grad else None
        for ky in range(3):
            for kx in range(3):
                off = ky * wp + kx
                if gk is not None:
                    gk[:, :, ky, kx] = gf @ xp[:, off:off + span].T
                if dxp is not None:
                    dxp[:, off:off + span] += taps[ky, kx].T @ gf
        gx = None
        if dxp is not None:
            gx = np.ascontiguousarray(dxp[:, :span].reshape(cin, n, hp, wp)[:, :, 1:-1, 1:-1].transpose(1, 0, 2, 3))
        return gx, gk

    return _result(out, (x, kernel), "conv2d", back)


def downsample2x(x):
    """2x2 average pooling."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ValueError(f"downsample2x needs even spatial size, got {h}x{w}")
    out = x.data.reshape(n, c, h // 2, 2, w // 2, 2).mean(axis=(3, 5))

    def back(g):
        return (np.repeat(np.repeat(g, 2, axis=2), 2, axis=3) * np.float32(0.25),)

    return _result(out, (x,), "downsample2x", back)


def upsample2x(x):
    """Nearest-neighbour duplication of every pixel into a 2x2 block."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def back(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),)

    return _result(out, (x,), "upsample2x", back)


def bf_norm(x, gain, running_std, training):
    """Bias-free batch normalisation: divide each channel by its std, times a gain.

    There is no mean subtraction on the output and no additive shift. In
    training mode the divisor is the batch std over (N, H, W) and
    ``running_std`` (a plain float32 array of shape [C]) is updated in place
    with momentum 0.1. In inference mode the stored running std is used, so
    the layer is a fixed per-channel scaling. Divisors are clamped at 1e-5.
    """
    x, gain = as_tensor(x), as_tensor(gain)
    n, c, h, w = x.shape
    if gain.shape != (c,) or running_std.shape != (c,):
        raise ValueError(f"bf_norm: expected gain/running_std of shape [{c}], got {list(gain.shape)}, {list(running_std.shape)}")
    xd = x.data
    if training:
        mean = xd.mean(axis=(0, 2, 3), dtype=np.float64)
        var = np.mean(np.square(xd - mean[None, :, None, None].astype(np.float32), dtype=np.float64), axis=(0, 2, 3))
        std = np.sqrt(var)
        running_std *= 1.0 - BF_MOMENTUM
        running_std += (BF_MOMENTUM * std).astype(np.float32)
    else:
        mean = None
        std = running_std.astype(np.float64)
    clamped = std < BF_EPS
    if clamped.any():
        log.warning("bf_norm: clamped std on %d channel(s) to %g", int(clamped.sum()), BF_EPS)
    div = np.maximum(std, BF_EPS).astype(np.float32)
    inv = (1.0 / div)[None, :, None, None]
    g4 = gain.data[None, :, None, None]
    xhat = xd * inv
    out = xhat * g4

    def back(g):
        ggain = (g * xhat).sum(axis=(0, 2, 3)) if gain.requires_grad else None
        gx = None
        if x.requires_grad:
            gy = g * g4
            gx = gy * inv
            if training:
                # d div / d x_i = (x_i - mean) / (m * div) on channels that were not clamped
                m = n * h * w
                centred = xd - mean[None, :, None, None].astype(np.float32)
                proj = (gy * xd).sum(axis=(0, 2, 3)) / (div * div * div * m)
                proj = np.where(clamped, 0.0, proj).astype(np.float32)
                gx = gx - proj[None, :, None, None] * centred
        return gx, ggain

    return _result(out, (x, gain), "bf_norm", back)


def pixel_select(x, index):
    """Scalar value ``x[index]``; used to backprop from a single output pixel."""
    x = as_tensor(x)
    shape = x.shape
    val = x.data[index]

    def back(g):
        gx = np.zeros(shape, dtype=np.float32)
        gx[index] = g.reshape(())
        return (gx,)

    return _result(np.float32(val), (x,), "pixel_select", back)
