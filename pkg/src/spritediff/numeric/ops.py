"""Neural-network primitives built on :mod:`spritediff.numeric.tensor`.

Convolutions use an im2col lowering so the heavy lifting is a single BLAS
matmul per call. All layouts are NCHW.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DTYPE, ShapeError, Tensor, as_tensor, make


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Affine map over the trailing axis: ``x @ weight.T + bias``."""
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {weight.shape}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    wd = weight.data
    out = x2 @ wd.T
    if bias is not None:
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        g2 = g.reshape(-1, wd.shape[0])
        gx = (g2 @ wd).reshape(x.shape) if x.requires_grad else None
        gw = g2.T @ x2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return make(out.reshape(lead + (wd.shape[0],)), parents, bw)


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """2-D cross-correlation with zero padding; stride 1 or 2."""
    if x.ndim != 4 or weight.ndim != 4 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with weight {weight.shape}")
    B, Cin, H, W = x.shape
    Cout, _, kh, kw = weight.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    Hp, Wp = xp.shape[2], xp.shape[3]
    Ho = (Hp - kh) // stride + 1
    Wo = (Wp - kw) // stride + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride][:, :, :Ho, :Wo]
    # columns laid out as (Cin*kh*kw, B*Ho*Wo) so both passes are one matmul
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(Cin * kh * kw, B * Ho * Wo)
    wmat = weight.data.reshape(Cout, -1)
    out = wmat @ cols
    if bias is not None:
        out += bias.data[:, None]
    out = np.ascontiguousarray(out.reshape(Cout, B, Ho, Wo).transpose(1, 0, 2, 3))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def bw(g):
        gm = g.transpose(1, 0, 2, 3).reshape(Cout, -1)
        gx = None
        if x.requires_grad:
            gcols = (wmat.T @ gm).reshape(Cin, kh, kw, B, Ho, Wo)
            gxp = np.zeros((Cin, B, Hp, Wp), dtype=DTYPE)
            for i in range(kh):
                for j in range(kw):
                    gxp[:, :, i : i + stride * Ho : stride, j : j + stride * Wo : stride] += gcols[:, i, j]
            gx = gxp[:, :, padding : padding + H, padding : padding + W] if padding else gxp
            gx = np.ascontiguousarray(gx.transpose(1, 0, 2, 3))
        gw = (gm @ cols.T).reshape(weight.shape) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, gm.sum(axis=1)

    return make(out, parents, bw)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    B, C, H, W = x.shape
    out = x.data.repeat(factor, axis=2).repeat(factor, axis=3)

    def bw(g):
        return (g.reshape(B, C, H, factor, W, factor).sum(axis=(3, 5)),)

    return make(out, (x,), bw)


def avg_pool2d(x: Tensor, k: int) -> Tensor:
    """Non-overlapping ``k``x``k`` average pooling; H and W must divide by k."""
    B, C, H, W = x.shape
    if H % k or W % k:
        raise ShapeError(f"avg_pool2d: {H}x{W} not divisible by {k}")
    out = x.data.reshape(B, C, H // k, k, W // k, k).mean(axis=(3, 5))

    def bw(g):
        return (np.repeat(np.repeat(g, k, axis=2), k, axis=3) / (k * k),)

    return make(out, (x,), bw)


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    B, C = x.shape[:2]
    if C % groups:
        raise ShapeError(f"group_norm: {C} channels not divisible into {groups} groups")
    xg = x.data.reshape(B, groups, -1)
    mu = xg.mean(axis=-1, keepdims=True)
    xc = xg - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = (xc * inv).reshape(x.shape)
    bshape = (1, C) + (1,) * (x.ndim - 2)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    red = (0,) + tuple(range(2, x.ndim))

    def bw(g):
        gx = None
        if x.requires_grad:
            gh = (g * gamma.data.reshape(bshape)).reshape(B, groups, -1)
            xh = xhat.reshape(B, groups, -1)
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xh * (gh * xh).mean(axis=-1, keepdims=True))
            gx = gx.reshape(x.shape)
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return make(out, (x, gamma, beta), bw)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the trailing axis with an affine output."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    red = tuple(range(x.ndim - 1))

    def bw(g):
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        return gx, (g * xhat).sum(axis=red), g.sum(axis=red)

    return make(out, (x, gamma, beta), bw)


def embedding(weight: Tensor, ids) -> Tensor:
    """Gather rows of ``weight`` by integer ``ids`` (any shape)."""
    ids = np.asarray(ids, dtype=np.int64)
    V = weight.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        raise ShapeError(f"embedding: ids out of range for vocabulary of {V}")

    def bw(g):
        gw = np.zeros(weight.shape, dtype=DTYPE)
        np.add.at(gw, ids.reshape(-1), g.reshape(-1, weight.shape[1]))
        return (gw,)

    return make(weight.data[ids], (weight,), bw)


def mse_loss(pred: Tensor, target) -> Tensor:
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ShapeError(f"mse_loss: {pred.shape} vs {target.shape}")
    diff = pred.data - target.data
    n = diff.size

    def bw(g):
        d = (2.0 / n) * g * diff
        return d, -d

    return make(np.asarray((diff * diff).mean()), (pred, target), bw)


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    z = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    n = labels.shape[0]
    rows = np.arange(n)

    def bw(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (g * d / n,)

    return make(np.asarray(-logp[rows, labels].mean()), (logits,), bw)
