"""Differentiable operations used by the recognition pipeline."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import Tensor, _make, concat, matmul, record_branch, sigmoid, tanh


def _pair(value) -> tuple[int, int]:
    if isinstance(value, (tuple, list)):
        return int(value[0]), int(value[1])
    return int(value), int(value)


def conv_output_size(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def _windows(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int, ho: int, wo: int) -> np.ndarray:
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, : sh * (ho - 1) + 1 : sh, : sw * (wo - 1) + 1 : sw]


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride=1,
    padding=0,
    groups: int = 1,
) -> Tensor:
    """2-D cross-correlation over an ``(N, C, H, W)`` batch, im2col + batched GEMM."""
    if x.ndim != 4:
        raise ValueError(f"conv2d input must be 4-D (N, C, H, W), got shape {x.shape}")
    if weight.ndim != 4:
        raise ValueError(f"conv2d weight must be 4-D, got shape {weight.shape}")
    n, cin, h, w = x.shape
    cout, cg, kh, kw = weight.shape
    if cin % groups:
        raise ValueError(f"input channels ({cin}) not divisible by groups ({groups})")
    if cout % groups:
        raise ValueError(f"output channels ({cout}) not divisible by groups ({groups})")
    if cg * groups != cin:
        raise ValueError(
            f"weight in-channel dimension is {cg} but input channels / groups = {cin // groups}"
        )
    if bias is not None and bias.shape != (cout,):
        raise ValueError(f"bias must have shape ({cout},), got {bias.shape}")
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    ho = conv_output_size(h, kh, sh, ph)
    wo = conv_output_size(w, kw, sw, pw)
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {kh}x{kw} larger than padded input {h + 2 * ph}x{w + 2 * pw}")

    g = groups
    og = cout // g
    k = cg * kh * kw
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw))) if (ph or pw) else x.data
    pointwise = kh == kw == 1 and sh == sw == 1 and ph == pw == 0
    if pointwise:
        cols = xp.reshape(n, g, cg, h * w).transpose(1, 0, 3, 2).reshape(g, n * h * w, cg)
    else:
        win = _windows(xp, kh, kw, sh, sw, ho, wo)  # (N, Cin, Ho, Wo, kh, kw)
        cols = (
            win.reshape(n, g, cg, ho, wo, kh, kw)
            .transpose(1, 0, 3, 4, 2, 5, 6)
            .reshape(g, n * ho * wo, k)
        )
    wmat = weight.data.reshape(g, og, k).transpose(0, 2, 1)  # (G, K, Og)
    out = np.matmul(cols, wmat)
    out = out.reshape(g, n, ho, wo, og).transpose(1, 0, 4, 2, 3).reshape(n, cout, ho, wo)
    if bias is not None:
        out = out + bias.data[None, :, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(grad):
        go = grad.reshape(n, g, og, ho, wo).transpose(1, 0, 3, 4, 2).reshape(g, n * ho * wo, og)
        gx = gw = None
        if weight.requires_grad:
            gw = np.matmul(cols.transpose(0, 2, 1), go).transpose(0, 2, 1).reshape(weight.shape)
        if x.requires_grad:
            dcols = np.matmul(go, wmat.transpose(0, 2, 1))
            if pointwise:
                gx = dcols.reshape(g, n, h, w, cg).transpose(1, 0, 4, 2, 3).reshape(x.shape)
            else:
                dcols = dcols.reshape(g, n, ho, wo, cg, kh, kw).transpose(1, 0, 4, 2, 3, 5, 6)
                dcols = dcols.reshape(n, cin, ho, wo, kh, kw)
                gxp = np.zeros(xp.shape, dtype=xp.dtype)
                for i in range(kh):
                    for j in range(kw):
                        gxp[:, :, i : i + sh * (ho - 1) + 1 : sh, j : j + sw * (wo - 1) + 1 : sw] += (
                            dcols[..., i, j]
                        )
                gx = gxp[:, :, ph : ph + h, pw : pw + w]
        grads = [gx, gw]
        if bias is not None:
            grads.append(grad.sum(axis=(0, 2, 3)) if bias.requires_grad else None)
        return grads

    return _make(out, parents, back)


def max_pool2d(x: Tensor, kernel: int = 3, stride: int = 2, padding: int = 1) -> Tensor:
    n, c, h, w = x.shape
    ho = conv_output_size(h, kernel, stride, padding)
    wo = conv_output_size(w, kernel, stride, padding)
    xp = np.pad(
        x.data,
        ((0, 0), (0, 0), (padding, padding), (padding, padding)),
        constant_values=-np.inf,
    )
    win = _windows(xp, kernel, kernel, stride, stride, ho, wo).reshape(n, c, ho, wo, -1)
    arg = win.argmax(axis=-1)
    record_branch(arg)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def back(grad):
        gxp = np.zeros(xp.shape, dtype=x.dtype)
        di, dj = np.divmod(arg, kernel)
        rows = np.arange(ho)[None, None, :, None] * stride + di
        cols = np.arange(wo)[None, None, None, :] * stride + dj
        nn_ = np.arange(n)[:, None, None, None]
        cc = np.arange(c)[None, :, None, None]
        np.add.at(gxp, (nn_, cc, rows, cols), grad)
        return (gxp[:, :, padding : padding + h, padding : padding + w],)

    return _make(out, (x,), back)


def avg_pool2d(x: Tensor, kh: int, kw: int) -> Tensor:
    """Non-overlapping average pooling; H and W must be multiples of the window."""
    n, c, h, w = x.shape
    if h % kh or w % kw:
        raise ValueError(f"input {h}x{w} is not a multiple of the pooling window {kh}x{kw}")
    return x.reshape(n, c, h // kh, kh, w // kw, kw).mean(axis=(3, 5))


def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    n, c = x.shape[:2]
    if c % groups:
        raise ValueError(f"channels ({c}) not divisible by norm groups ({groups})")
    xg = x.data.reshape(n, groups, -1)
    mu = xg.mean(axis=2, keepdims=True)
    centered = xg - mu
    inv_std = 1.0 / np.sqrt((centered * centered).mean(axis=2, keepdims=True) + eps)
    xhat = (centered * inv_std).reshape(x.shape)
    bshape = (1, c) + (1,) * (x.ndim - 2)
    out = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)
    reduce_axes = (0,) + tuple(range(2, x.ndim))

    def back(grad):
        gx = ggamma = gbeta = None
        if gamma.requires_grad:
            ggamma = (grad * xhat).sum(axis=reduce_axes)
        if beta.requires_grad:
            gbeta = grad.sum(axis=reduce_axes)
        if x.requires_grad:
            dxhat = (grad * gamma.data.reshape(bshape)).reshape(n, groups, -1)
            xh = xhat.reshape(n, groups, -1)
            gx = inv_std * (
                dxhat - dxhat.mean(axis=2, keepdims=True) - xh * (dxhat * xh).mean(axis=2, keepdims=True)
            )
            gx = gx.reshape(x.shape)
        return gx, ggamma, gbeta

    return _make(out, (x, gamma, beta), back)


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis of ``x``."""
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear: input features {x.shape[-1]} != weight in-features {weight.shape[1]}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data.T
    if bias is not None:
        out = out + bias.data
    out = out.reshape(lead + (weight.shape[0],))
    parents = (x, weight) if bias is None else (x, weight, bias)

    def back(grad):
        g2 = grad.reshape(-1, weight.shape[0])
        gx = (g2 @ weight.data).reshape(x.shape) if x.requires_grad else None
        gw = g2.T @ x2 if weight.requires_grad else None
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0) if bias.requires_grad else None)
        return grads

    return _make(out, parents, back)


def embedding(indices, weight: Tensor) -> Tensor:
    idx = np.asarray(indices, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= weight.shape[0]):
        raise IndexError(f"token index out of range [0, {weight.shape[0]})")

    def back(grad):
        gw = np.zeros_like(weight.data)
        np.add.at(gw, idx, grad)
        return (gw,)

    return _make(weight.data[idx], (weight,), back)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def back(grad):
        return (out * (grad - (grad * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), back)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))

    def back(grad):
        return (grad - np.exp(out) * grad.sum(axis=axis, keepdims=True),)

    return _make(out, (x,), back)


def nll_loss(log_probs: Tensor, targets, ignore_index: int | None = None) -> Tensor:
    """Mean negative log-likelihood over every target position not equal to ``ignore_index``."""
    tgt = np.asarray(targets, dtype=np.int64)
    if log_probs.shape[:-1] != tgt.shape:
        raise ValueError(f"targets shape {tgt.shape} does not match log_probs {log_probs.shape[:-1]}")
    n_classes = log_probs.shape[-1]
    keep = np.ones(tgt.shape, dtype=bool) if ignore_index is None else tgt != ignore_index
    bad = keep & ((tgt < 0) | (tgt >= n_classes))
    if bad.any():
        raise IndexError(f"target index {int(tgt[bad][0])} out of range [0, {n_classes})")
    safe = np.where(keep, tgt, 0)
    picked = np.take_along_axis(log_probs.data, safe[..., None], axis=-1)[..., 0]
    count = int(keep.sum())
    denom = max(count, 1)
    value = -(picked * keep).sum() / denom

    def back(grad):
        g = np.zeros_like(log_probs.data)
        np.put_along_axis(g, safe[..., None], (-grad / denom * keep)[..., None], axis=-1)
        return (g,)

    return _make(np.asarray(value, dtype=log_probs.dtype), (log_probs,), back)


def bilinear_sample(x: Tensor, grid: Tensor) -> Tensor:
    """Sample ``x`` at normalized grid locations.

    ``grid[..., 0]`` is horizontal and ``grid[..., 1]`` vertical; -1 and +1 land on
    the centres of the first and last pixels. Coordinates outside are clamped to
    the border, which gives a zero gradient w.r.t. the grid there.
    """
    if grid.ndim != 4 or grid.shape[-1] != 2:
        raise ValueError(f"grid must have shape (N, H', W', 2), got {grid.shape}")
    n, c, h, w = x.shape
    if grid.shape[0] != n:
        raise ValueError(f"grid batch {grid.shape[0]} != input batch {n}")
    ho, wo = grid.shape[1:3]
    sx = (w - 1) / 2.0
    sy = (h - 1) / 2.0
    px = (grid.data[..., 0] + 1.0) * sx
    py = (grid.data[..., 1] + 1.0) * sy
    inside_x = (px >= 0) & (px <= w - 1)
    inside_y = (py >= 0) & (py <= h - 1)
    px = np.clip(px, 0, w - 1)
    py = np.clip(py, 0, h - 1)
    x0 = np.clip(np.floor(px).astype(np.int64), 0, max(w - 2, 0))
    y0 = np.clip(np.floor(py).astype(np.int64), 0, max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    record_branch(x0, y0, inside_x, inside_y)
    wx = (px - x0)[..., None]
    wy = (py - y0)[..., None]

    flat = x.data.transpose(0, 2, 3, 1).reshape(n, h * w, c)
    bidx = np.arange(n)[:, None, None]
    i00, i01 = y0 * w + x0, y0 * w + x1
    i10, i11 = y1 * w + x0, y1 * w + x1
    v00, v01 = flat[bidx, i00], flat[bidx, i01]
    v10, v11 = flat[bidx, i10], flat[bidx, i11]
    top = v00 + wx * (v01 - v00)
    bottom = v10 + wx * (v11 - v10)
    out = (top + wy * (bottom - top)).transpose(0, 3, 1, 2)

    def back(grad):
        g = grad.transpose(0, 2, 3, 1)  # (N, Ho, Wo, C)
        gx = ggrid = None
        if x.requires_grad:
            acc = np.zeros((n, h * w, c), dtype=x.dtype)
            for idx, weight in (
                (i00, (1 - wx) * (1 - wy)),
                (i01, wx * (1 - wy)),
                (i10, (1 - wx) * wy),
                (i11, wx * wy),
            ):
                np.add.at(acc, (bidx, idx), weight * g)
            gx = acc.reshape(n, h, w, c).transpose(0, 3, 1, 2)
        if grid.requires_grad:
            dx = ((1 - wy) * (v01 - v00) + wy * (v11 - v10)) * g
            dy = (bottom - top) * g
            ggrid = np.empty(grid.shape, dtype=grid.dtype)
            ggrid[..., 0] = dx.sum(axis=-1) * sx * inside_x
            ggrid[..., 1] = dy.sum(axis=-1) * sy * inside_y
        return gx, ggrid

    return _make(out.astype(x.dtype, copy=False), (x, grid), back)


def gru_cell(
    x: Tensor,
    h: Tensor,
    w_ih: Tensor,
    w_hh: Tensor,
    b_ih: Tensor | None = None,
    b_hh: Tensor | None = None,
) -> Tensor:
    """One GRU update. Gate rows are stacked as (reset, update, candidate).

    r = sigmoid(W_r x + U_r h), z = sigmoid(W_z x + U_z h),
    n = tanh(W_n x + r * (U_n h)), h' = (1 - z) * n + z * h
    (biases omitted above).
    """
    dh = h.shape[-1]
    if w_ih.shape != (3 * dh, x.shape[-1]):
        raise ValueError(f"w_ih must be {(3 * dh, x.shape[-1])}, got {w_ih.shape}")
    if w_hh.shape != (3 * dh, dh):
        raise ValueError(f"w_hh must be {(3 * dh, dh)}, got {w_hh.shape}")
    if x.shape[0] != h.shape[0]:
        raise ValueError(f"batch mismatch: x has {x.shape[0]} rows, h has {h.shape[0]}")
    gi = linear(x, w_ih, b_ih)
    gh = linear(h, w_hh, b_hh)
    r = sigmoid(gi[:, :dh] + gh[:, :dh])
    z = sigmoid(gi[:, dh : 2 * dh] + gh[:, dh : 2 * dh])
    cand = tanh(gi[:, 2 * dh :] + r * gh[:, 2 * dh :])
    return (1.0 - z) * cand + z * h


def attention_context(weights: Tensor, values: Tensor) -> Tensor:
    """Weighted sum ``sum_i weights[n, i] * values[n, i, :]``."""
    n, m = weights.shape
    return matmul(weights.reshape(n, 1, m), values).reshape(n, values.shape[-1])


__all__ = [
    "attention_context",
    "avg_pool2d",
    "bilinear_sample",
    "concat",
    "conv2d",
    "conv_output_size",
    "embedding",
    "group_norm",
    "gru_cell",
    "linear",
    "log_softmax",
    "max_pool2d",
    "nll_loss",
    "softmax",
]
