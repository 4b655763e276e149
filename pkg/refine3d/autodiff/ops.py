"""
Differentiable operations used by the reconstruction network.

Convolutions use the cross-correlation convention (no kernel flip) and zero padding.
Layouts are channels-first: [N, C, *spatial] for inputs, [K, C, *kernel] for conv weights
and [C_in, C_out, *kernel] for transposed-conv weights.
"""
from __future__ import annotations

import itertools
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from refine3d.autodiff.tensor import Tensor, make_result, note_branches
from refine3d.errors import DimensionError

Operand = Union[Tensor, np.ndarray, float, int]

LEAKY_SLOPE = 0.1
BN_EPS = 1e-5
BN_MOMENTUM = 0.9


def as_tensor(value: Operand, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype) if dtype is not None else value)


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum `grad` down to `shape` after numpy broadcasting"""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {list(a.shape)} and {list(b.shape)} are not compatible")


# ---------------- elementwise arithmetic ----------------
def add(a: Operand, b: Operand) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _broadcast_check("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return make_result("add", a.data + b.data, (a, b), backward)


def sub(a: Operand, b: Operand) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _broadcast_check("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return make_result("sub", a.data - b.data, (a, b), backward)


def mul(a: Operand, b: Operand) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)
    _broadcast_check("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return make_result("mul", a.data * b.data, (a, b), backward)


def scalar_mul(x: Tensor, c: float) -> Tensor:
    c = x.dtype.type(c)

    def backward(g):
        return (g * c,)

    return make_result("scalar_mul", x.data * c, (x,), backward)


def neg(x: Tensor) -> Tensor:
    return make_result("neg", -x.data, (x,), lambda g: (-g,))


def log(x: Tensor) -> Tensor:
    def backward(g):
        return (g / x.data,)

    return make_result("log", np.log(x.data), (x,), backward)


def clip(x: Tensor, low: float, high: float) -> Tensor:
    inside = (x.data >= low) & (x.data <= high)
    note_branches(inside)

    def backward(g):
        return (g * inside,)

    return make_result("clip", np.clip(x.data, low, high), (x,), backward)


# ---------------- reductions ----------------
def _norm_axes(axis, ndim: int) -> Tuple[int, ...]:
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axes(axis, x.ndim)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result("sum", x.data.sum(axis=axes, keepdims=keepdims), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axes(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    if count == 0:
        raise DimensionError(f"mean over empty axes {axes} of shape {list(x.shape)}")

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return make_result("mean", x.data.mean(axis=axes, keepdims=keepdims), (x,), backward)


# ---------------- linear algebra ----------------
def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast"""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner extents do not match for {list(a.shape)} and {list(b.shape)}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch extents do not match for {list(a.shape)} and {list(b.shape)}")

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_result("matmul", np.matmul(a.data, b.data), (a, b), backward)


# ---------------- structural ----------------
def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(s) for s in shape)
    try:
        data = x.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot view {list(x.shape)} as {list(shape)}")

    def backward(g):
        return (g.reshape(x.shape),)

    return make_result("reshape", data, (x,), backward)


def flatten(x: Tensor, start_axis: int = 1) -> Tensor:
    return reshape(x, x.shape[:start_axis] + (-1,))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(a % x.ndim for a in axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose: axes {axes} are not a permutation for rank {x.ndim}")
    inverse = tuple(np.argsort(axes))

    def backward(g):
        return (np.transpose(g, inverse),)

    return make_result("transpose", np.transpose(x.data, axes), (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("concat needs at least one tensor")
    rank = tensors[0].ndim
    axis = axis % rank
    for t in tensors[1:]:
        if t.ndim != rank or any(t.shape[i] != tensors[0].shape[i] for i in range(rank) if i != axis):
            raise DimensionError(
                f"concat on axis {axis}: shape {list(t.shape)} is incompatible with {list(tensors[0].shape)}"
            )
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return make_result("concat", np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise DimensionError("stack needs at least one tensor")
    for t in tensors[1:]:
        if t.shape != tensors[0].shape:
            raise DimensionError(f"stack: shape {list(t.shape)} differs from {list(tensors[0].shape)}")
    axis = axis % (tensors[0].ndim + 1)

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return make_result("stack", np.stack([t.data for t in tensors], axis=axis), tensors, backward)


def slice(x: Tensor, index) -> Tensor:  # noqa: A001
    try:
        data = x.data[index]
    except IndexError as e:
        raise DimensionError(f"slice {index!r} out of range for shape {list(x.shape)}: {e}")

    def backward(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return make_result("slice", np.array(data, copy=True), (x,), backward)


# ---------------- activations ----------------
def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    note_branches(mask)

    def backward(g):
        return (g * mask,)

    return make_result("relu", x.data * mask, (x,), backward)


def leaky_relu(x: Tensor, alpha: float = LEAKY_SLOPE) -> Tensor:
    note_branches(x.data > 0)
    slope = np.where(x.data > 0, 1.0, alpha).astype(x.dtype)

    def backward(g):
        return (g * slope,)

    return make_result("leaky_relu", x.data * slope, (x,), backward)


def sigmoid(x: Tensor) -> Tensor:
    z = x.data
    out = np.empty_like(z)
    positive = z >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-z[positive]))
    e = np.exp(z[~positive])
    out[~positive] = e / (1.0 + e)

    def backward(g):
        return (g * out * (1.0 - out),)

    return make_result("sigmoid", out, (x,), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return make_result("softmax", out, (x,), backward)


# ---------------- convolution ----------------
def _pad_spatial(data: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return data
    nd = data.ndim - 2
    return np.pad(data, [(0, 0), (0, 0)] + [(pad, pad)] * nd)


def _conv_nd(op: str, x: Tensor, w: Tensor, bias: Optional[Tensor], stride: int, pad: int) -> Tensor:
    nd = w.ndim - 2
    if x.ndim != nd + 2:
        raise DimensionError(f"{op}: input must have rank {nd + 2}, got shape {list(x.shape)}")
    if x.shape[0] == 0:
        raise DimensionError(f"{op}: empty batch")
    if w.shape[1] != x.shape[1]:
        raise DimensionError(f"{op}: weight {list(w.shape)} expects {w.shape[1]} channels, input {list(x.shape)} has {x.shape[1]}")
    if bias is not None and bias.shape != (w.shape[0],):
        raise DimensionError(f"{op}: bias shape {list(bias.shape)} does not match {w.shape[0]} output channels")
    if stride < 1 or pad < 0:
        raise DimensionError(f"{op}: stride must be >= 1 and pad >= 0, got stride={stride} pad={pad}")
    kernel = w.shape[2:]
    in_spatial = x.shape[2:]
    out_spatial = tuple((n + 2 * pad - k) // stride + 1 for n, k in zip(in_spatial, kernel))
    if any(k > n + 2 * pad for n, k in zip(in_spatial, kernel)) or any(o <= 0 for o in out_spatial):
        raise DimensionError(
            f"{op}: kernel {list(kernel)} with pad {pad} stride {stride} gives no output for input {list(x.shape)}"
        )

    xp = _pad_spatial(x.data, pad)
    spatial_axes = tuple(range(2, 2 + nd))
    windows = sliding_window_view(xp, kernel, axis=spatial_axes)
    windows = windows[(np.s_[:], np.s_[:]) + tuple(np.s_[: o * stride : stride] for o in out_spatial)]
    # windows: [N, C, *out, *kernel]
    window_axes = [1] + list(range(2 + nd, 2 + 2 * nd))
    weight_axes = [1] + list(range(2, 2 + nd))
    out = np.tensordot(windows, w.data, axes=(window_axes, weight_axes))
    out = np.moveaxis(out, -1, 1)
    if bias is not None:
        out = out + bias.data.reshape((1, -1) + (1,) * nd)

    parents = (x, w) if bias is None else (x, w, bias)

    def backward(g):
        reduce_axes = [0] + list(range(2, 2 + nd))
        gw = np.tensordot(g, windows, axes=(reduce_axes, reduce_axes))
        gxp = np.zeros_like(xp)
        for offset in itertools.product(*(range(k) for k in kernel)):
            contribution = np.tensordot(g, w.data[(np.s_[:], np.s_[:]) + offset], axes=([1], [0]))
            target = (np.s_[:], np.s_[:]) + tuple(
                np.s_[o : o + stride * (n - 1) + 1 : stride] for o, n in zip(offset, out_spatial)
            )
            gxp[target] += np.moveaxis(contribution, -1, 1)
        gx = gxp[(np.s_[:], np.s_[:]) + tuple(np.s_[pad : pad + n] for n in in_spatial)]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=tuple(reduce_axes)))
        return grads

    return make_result(op, out, parents, backward)


def conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """x [N,C,H,W], w [K,C,kh,kw] -> [N,K,H',W']"""
    if w.ndim != 4:
        raise DimensionError(f"conv2d: weight must be [K,C,kh,kw], got {list(w.shape)}")
    return _conv_nd("conv2d", x, w, bias, stride, pad)


def conv3d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, stride: int = 1, pad: int = 0) -> Tensor:
    """x [N,C,D,H,W], w [K,C,kd,kh,kw] -> [N,K,D',H',W']"""
    if w.ndim != 5:
        raise DimensionError(f"conv3d: weight must be [K,C,kd,kh,kw], got {list(w.shape)}")
    return _conv_nd("conv3d", x, w, bias, stride, pad)


def conv_transpose3d(
    x: Tensor,
    w: Tensor,
    bias: Optional[Tensor] = None,
    stride: int = 1,
    pad: int = 0,
    output_pad: int = 0,
) -> Tensor:
    """
    Transposed 3D convolution, x [N,Cin,D,H,W], w [Cin,Cout,kd,kh,kw].

    Output extent per axis: (n - 1) * stride - 2 * pad + k + output_pad.
    """
    nd = 3
    if x.ndim != 5 or w.ndim != 5:
        raise DimensionError(f"conv_transpose3d: expected rank-5 input and weight, got {list(x.shape)} and {list(w.shape)}")
    if x.shape[0] == 0:
        raise DimensionError("conv_transpose3d: empty batch")
    if w.shape[0] != x.shape[1]:
        raise DimensionError(
            f"conv_transpose3d: weight {list(w.shape)} expects {w.shape[0]} channels, input {list(x.shape)} has {x.shape[1]}"
        )
    if bias is not None and bias.shape != (w.shape[1],):
        raise DimensionError(f"conv_transpose3d: bias shape {list(bias.shape)} does not match {w.shape[1]} output channels")
    if stride < 1 or pad < 0 or output_pad < 0 or output_pad >= stride:
        raise DimensionError(f"conv_transpose3d: invalid stride={stride} pad={pad} output_pad={output_pad}")
    kernel = w.shape[2:]
    in_spatial = x.shape[2:]
    full = tuple((n - 1) * stride + k + output_pad for n, k in zip(in_spatial, kernel))
    out_spatial = tuple(f - 2 * pad for f in full)
    if any(o <= 0 for o in out_spatial):
        raise DimensionError(f"conv_transpose3d: pad {pad} leaves no output for input {list(x.shape)}")

    def scatter_slices(offset):
        return (np.s_[:], np.s_[:]) + tuple(
            np.s_[o : o + stride * (n - 1) + 1 : stride] for o, n in zip(offset, in_spatial)
        )

    crop = (np.s_[:], np.s_[:]) + tuple(np.s_[pad : pad + o] for o in out_spatial)
    offsets = list(itertools.product(*(range(k) for k in kernel)))

    buffer = np.zeros((x.shape[0], w.shape[1]) + full, dtype=np.result_type(x.data, w.data))
    for offset in offsets:
        contribution = np.tensordot(x.data, w.data[(np.s_[:], np.s_[:]) + offset], axes=([1], [0]))
        buffer[scatter_slices(offset)] += np.moveaxis(contribution, -1, 1)
    out = buffer[crop]
    if bias is not None:
        out = out + bias.data.reshape((1, -1) + (1,) * nd)
    else:
        out = out.copy()

    parents = (x, w) if bias is None else (x, w, bias)

    def backward(g):
        gbuf = np.zeros_like(buffer)
        gbuf[crop] = g
        gx = np.zeros_like(x.data)
        gw = np.zeros_like(w.data)
        batch_spatial = [0] + list(range(2, 2 + nd))
        for offset in offsets:
            region = gbuf[scatter_slices(offset)]
            gx += np.moveaxis(np.tensordot(region, w.data[(np.s_[:], np.s_[:]) + offset], axes=([1], [1])), -1, 1)
            gw[(np.s_[:], np.s_[:]) + offset] = np.tensordot(x.data, region, axes=(batch_spatial, batch_spatial))
        grads = [gx, gw]
        if bias is not None:
            grads.append(g.sum(axis=tuple(batch_spatial)))
        return grads

    return make_result("conv_transpose3d", out, parents, backward)


# ---------------- pooling / resampling ----------------
def maxpool(x: Tensor, k: int = 2) -> Tensor:
    """
    Max pooling with window k and stride k over every spatial axis (2D or 3D).

    Ties go to the first element of the window in scan order.
    """
    nd = x.ndim - 2
    if nd not in (2, 3):
        raise DimensionError(f"maxpool: expected a 2D or 3D batch, got shape {list(x.shape)}")
    in_spatial = x.shape[2:]
    if any(n < k for n in in_spatial):
        raise DimensionError(f"maxpool: spatial extent {list(in_spatial)} smaller than window {k}")
    out_spatial = tuple(n // k for n in in_spatial)
    crop = (np.s_[:], np.s_[:]) + tuple(np.s_[: o * k] for o in out_spatial)
    cropped = x.data[crop]
    split_shape = x.shape[:2] + tuple(itertools.chain.from_iterable((o, k) for o in out_spatial))
    perm = [0, 1] + [2 + 2 * i for i in range(nd)] + [3 + 2 * i for i in range(nd)]
    windows = cropped.reshape(split_shape).transpose(perm).reshape(x.shape[:2] + out_spatial + (k ** nd,))
    winner = windows.argmax(axis=-1)[..., None]
    note_branches(winner)
    out = np.take_along_axis(windows, winner, axis=-1)[..., 0]

    def backward(g):
        gwin = np.zeros_like(windows)
        np.put_along_axis(gwin, winner, g[..., None], axis=-1)
        gsplit = gwin.reshape(x.shape[:2] + out_spatial + (k,) * nd).transpose(np.argsort(perm))
        gx = np.zeros_like(x.data)
        gx[crop] = gsplit.reshape(cropped.shape)
        return (gx,)

    return make_result("maxpool", out, (x,), backward)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    nd = x.ndim - 2
    out = x.data
    for axis in range(2, 2 + nd):
        out = np.repeat(out, factor, axis=axis)
    split_shape = x.shape[:2] + tuple(itertools.chain.from_iterable((n, factor) for n in x.shape[2:]))
    factor_axes = tuple(3 + 2 * i for i in range(nd))

    def backward(g):
        return (g.reshape(split_shape).sum(axis=factor_axes),)

    return make_result("upsample_nearest", out, (x,), backward)


# ---------------- normalization ----------------
def batchnorm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Tensor,
    running_var: Tensor,
    mode: str = "train",
    momentum: float = BN_MOMENTUM,
    eps: float = BN_EPS,
) -> Tensor:
    """
    Per-channel batch normalization over the batch and spatial axes.

    Train mode normalizes with batch statistics and folds them into the running
    statistics (running = momentum * running + (1 - momentum) * batch; the running
    variance uses the unbiased estimate). Eval mode uses the running statistics.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"batchnorm mode must be 'train' or 'eval', got {mode!r}")
    if x.ndim < 2 or x.shape[0] == 0:
        raise DimensionError(f"batchnorm: empty or unbatched input {list(x.shape)}")
    channels = x.shape[1]
    if gamma.shape != (channels,) or beta.shape != (channels,):
        raise DimensionError(f"batchnorm: gamma/beta must have shape [{channels}]")
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, channels) + (1,) * (x.ndim - 2)
    count = x.size // channels
    g_b = gamma.data.reshape(bshape)

    if mode == "train":
        mu = x.data.mean(axis=axes, keepdims=True)
        centered = x.data - mu
        var = (centered * centered).mean(axis=axes, keepdims=True)
        invstd = 1.0 / np.sqrt(var + eps)
        xhat = centered * invstd
        unbiased = var * (count / (count - 1)) if count > 1 else var
        running_mean.data[...] = momentum * running_mean.data + (1.0 - momentum) * mu.reshape(channels)
        running_var.data[...] = momentum * running_var.data + (1.0 - momentum) * unbiased.reshape(channels)
    else:
        invstd = 1.0 / np.sqrt(running_var.data.reshape(bshape) + eps)
        xhat = (x.data - running_mean.data.reshape(bshape)) * invstd
    xhat = xhat.astype(x.dtype, copy=False)
    invstd = invstd.astype(x.dtype, copy=False)
    out = g_b * xhat + beta.data.reshape(bshape)

    def backward(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gxhat = g * g_b
        if mode == "train":
            gx = (invstd / count) * (
                count * gxhat
                - gxhat.sum(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            gx = gxhat * invstd
        return gx, ggamma, gbeta

    return make_result("batchnorm", out, (x, gamma, beta), backward)


# ---------------- operator overloads ----------------
def _bind_operators() -> None:
    Tensor.__add__ = lambda self, other: add(self, other)
    Tensor.__radd__ = lambda self, other: add(other, self)
    Tensor.__sub__ = lambda self, other: sub(self, other)
    Tensor.__rsub__ = lambda self, other: sub(other, self)
    Tensor.__mul__ = lambda self, other: mul(self, other)
    Tensor.__rmul__ = lambda self, other: mul(other, self)
    Tensor.__neg__ = lambda self: neg(self)
    Tensor.__matmul__ = lambda self, other: matmul(self, other)
    Tensor.__getitem__ = lambda self, index: slice(self, index)


_bind_operators()
