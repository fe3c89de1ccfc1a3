"""
Differentiable primitives: convolution, linear maps, softmax, pointwise
functions, reductions, nearest upsampling and the shape plumbing the network
needs.

Broadcasting is explicit. Binary pointwise ops accept equal shapes or a
single-element operand; everything else goes through `expand`.
Reductions and softmax normalisers accumulate in float64.
"""

from __future__ import annotations

import logging
from typing import Optional, Sequence, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from src.errors import DimensionError, DomainError, ParameterError
from src.ndarr.tensor import Function, Tensor, as_tensor

logger = logging.getLogger(__name__)

Operand = Union[Tensor, float, int]


def _normalize_axis(axis: int, ndim: int) -> int:
    if not -ndim <= axis < ndim:
        raise ParameterError(f"axis {axis} is out of range for {ndim} dimensions")
    return axis % ndim


def _binary_operands(a: Operand, b: Operand, kind: str) -> tuple[Tensor, Tensor]:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape and a.size != 1 and b.size != 1:
        raise DimensionError(f"{kind}: shapes {a.shape} and {b.shape} differ (only scalar broadcast is implicit)")
    return a, b


def _reduce_to(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Collapse a gradient back onto a scalar operand's shape."""
    if grad.shape == shape:
        return grad
    return np.asarray(grad.sum(dtype=np.float64), dtype=grad.dtype).reshape(shape)


# ============================================
# Pointwise
# ============================================

class Add(Function):
    kind = "add"

    def forward(self, a, b):
        return a + b

    def backward(self, grad):
        a, b = self.inputs
        return _reduce_to(grad, a.shape), _reduce_to(grad, b.shape)


class Sub(Function):
    kind = "sub"

    def forward(self, a, b):
        return a - b

    def backward(self, grad):
        a, b = self.inputs
        return _reduce_to(grad, a.shape), _reduce_to(-grad, b.shape)


class Mul(Function):
    kind = "mul"

    def forward(self, a, b):
        return a * b

    def backward(self, grad):
        a, b = self.inputs
        return _reduce_to(grad * b.data, a.shape), _reduce_to(grad * a.data, b.shape)


class Neg(Function):
    kind = "neg"

    def forward(self, a):
        return -a

    def backward(self, grad):
        return (-grad,)


class Relu(Function):
    kind = "relu"

    def forward(self, a):
        self.saved["mask"] = a > 0
        return np.where(self.saved["mask"], a, 0)

    def backward(self, grad):
        return (grad * self.saved["mask"],)


class Sigmoid(Function):
    kind = "sigmoid"

    def forward(self, a):
        a64 = a.astype(np.float64)
        out = np.empty_like(a64)
        pos = a64 >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-a64[pos]))
        e = np.exp(a64[~pos])
        out[~pos] = e / (1.0 + e)
        self.saved["out"] = out
        return out

    def backward(self, grad):
        out = self.saved["out"]
        return (grad * out * (1.0 - out),)


class Log(Function):
    kind = "log"

    def forward(self, a):
        if (a <= 0).any():
            raise DomainError("log of a non-positive value")
        return np.log(a)

    def backward(self, grad):
        return (grad / self.inputs[0].data,)


class Clamp(Function):
    kind = "clamp"

    def forward(self, a, low: float, high: float):
        self.saved["inside"] = (a >= low) & (a <= high)
        return np.clip(a, low, high)

    def backward(self, grad):
        return (grad * self.saved["inside"],)


def add(a: Operand, b: Operand) -> Tensor:
    return Add.apply(*_binary_operands(a, b, "add"))


def sub(a: Operand, b: Operand) -> Tensor:
    return Sub.apply(*_binary_operands(a, b, "sub"))


def mul(a: Operand, b: Operand) -> Tensor:
    return Mul.apply(*_binary_operands(a, b, "mul"))


def neg(a: Tensor) -> Tensor:
    return Neg.apply(a)


def relu(a: Tensor) -> Tensor:
    return Relu.apply(a)


def sigmoid(a: Tensor) -> Tensor:
    return Sigmoid.apply(a)


def log(a: Tensor) -> Tensor:
    return Log.apply(a)


def clamp(a: Tensor, low: float, high: float) -> Tensor:
    return Clamp.apply(a, low=low, high=high)


_UNARY = {"relu": relu, "sigmoid": sigmoid, "log": log, "neg": neg}
_BINARY = {"add": add, "sub": sub, "mul": mul}


def elementwise(input: Tensor, fn: str, other: Optional[Operand] = None) -> Tensor:
    """Apply a named pointwise function (relu, sigmoid, log, neg, add, sub, mul)."""
    if fn in _UNARY:
        return _UNARY[fn](input)
    if fn in _BINARY:
        if other is None:
            raise ParameterError(f"'{fn}' needs a second operand")
        return _BINARY[fn](input, other)
    raise ParameterError(f"Unknown elementwise function '{fn}'")


# ============================================
# Reductions & normalisers
# ============================================

class Reduce(Function):
    kind = "reduce"

    def forward(self, a, axes: tuple[int, ...], mean: bool):
        self.saved["axes"] = axes
        total = a.sum(axis=axes, dtype=np.float64)
        if mean:
            count = int(np.prod([a.shape[ax] for ax in axes]))
            self.saved["scale"] = 1.0 / count
            return total / count
        self.saved["scale"] = 1.0
        return total

    def backward(self, grad):
        (a,) = self.inputs
        g = np.expand_dims(grad, self.saved["axes"]) * self.saved["scale"]
        return (np.broadcast_to(g, a.shape).copy(),)


def reduce(input: Tensor, kind: str, axes: Optional[Sequence[int]] = None) -> Tensor:
    """Sum or mean over ``axes``; ``None`` means all axes, an empty list is the identity."""
    if kind not in ("sum", "mean"):
        raise ParameterError(f"Unknown reduction '{kind}'")
    if axes is None:
        axes = range(input.ndim)
    axes = tuple(_normalize_axis(ax, input.ndim) for ax in axes)
    if len(set(axes)) != len(axes):
        raise ParameterError(f"Reduction axes must be distinct, got {axes}")
    if not axes:
        return input
    return Reduce.apply(input, axes=tuple(sorted(axes)), mean=kind == "mean")


def sum(input: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:  # noqa: A001
    return reduce(input, "sum", axes)


def mean(input: Tensor, axes: Optional[Sequence[int]] = None) -> Tensor:
    return reduce(input, "mean", axes)


class Softmax(Function):
    kind = "softmax"

    def forward(self, a, axis: int):
        a64 = a.astype(np.float64)
        e = np.exp(a64 - a64.max(axis=axis, keepdims=True))
        out = e / e.sum(axis=axis, keepdims=True)
        self.saved["out"] = out
        self.saved["axis"] = axis
        return out

    def backward(self, grad):
        out, axis = self.saved["out"], self.saved["axis"]
        dot = (grad * out).sum(axis=axis, keepdims=True, dtype=np.float64)
        return (out * (grad - dot),)


class LogSoftmax(Function):
    kind = "log_softmax"

    def forward(self, a, axis: int):
        a64 = a.astype(np.float64)
        shifted = a64 - a64.max(axis=axis, keepdims=True)
        out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        self.saved["softmax"] = np.exp(out)
        self.saved["axis"] = axis
        return out

    def backward(self, grad):
        sm, axis = self.saved["softmax"], self.saved["axis"]
        total = grad.sum(axis=axis, keepdims=True, dtype=np.float64)
        return (grad - sm * total,)


def softmax(input: Tensor, axis: int = -1) -> Tensor:
    return Softmax.apply(input, axis=_normalize_axis(axis, input.ndim))


def log_softmax(input: Tensor, axis: int = -1) -> Tensor:
    return LogSoftmax.apply(input, axis=_normalize_axis(axis, input.ndim))


# ============================================
# Linear maps
# ============================================

class Linear(Function):
    kind = "linear"

    def forward(self, x, w, b):
        return x @ w + b

    def backward(self, grad):
        x, w, _ = self.inputs
        return grad @ w.data.T, x.data.T @ grad, grad.sum(axis=0, dtype=np.float64)


def linear(input: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """out = input · weight + bias for input [B,F], weight [F,G], bias [G]."""
    if input.ndim != 2 or weight.ndim != 2 or bias.ndim != 1:
        raise DimensionError(f"linear expects [B,F]·[F,G]+[G], got {input.shape}, {weight.shape}, {bias.shape}")
    if input.shape[1] != weight.shape[0] or weight.shape[1] != bias.shape[0]:
        raise DimensionError(f"linear inner dimensions disagree: {input.shape}, {weight.shape}, {bias.shape}")
    return Linear.apply(input, weight, bias)


class Conv2d(Function):
    kind = "conv2d"

    def forward(self, x, w, b, stride: int, padding: int):
        batch, channels, _, _ = x.shape
        out_channels, _, k, _ = w.shape
        xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
        windows = sliding_window_view(xp, (k, k), axis=(2, 3))[:, :, ::stride, ::stride]
        out_h, out_w = windows.shape[2], windows.shape[3]
        cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(batch * out_h * out_w, channels * k * k)
        out = cols @ w.reshape(out_channels, -1).T + b

        self.saved.update(cols=cols, padded_shape=xp.shape, out_hw=(out_h, out_w), stride=stride, padding=padding)
        return out.reshape(batch, out_h, out_w, out_channels).transpose(0, 3, 1, 2)

    def backward(self, grad):
        x, w, _ = self.inputs
        cols = self.saved["cols"]
        stride, padding = self.saved["stride"], self.saved["padding"]
        out_h, out_w = self.saved["out_hw"]
        batch, channels = x.shape[:2]
        out_channels, _, k, _ = w.shape

        g = grad.transpose(0, 2, 3, 1).reshape(-1, out_channels)
        dw = (g.T @ cols).reshape(w.shape)
        db = g.sum(axis=0, dtype=np.float64)

        dcols = (g @ w.data.reshape(out_channels, -1)).reshape(batch, out_h, out_w, channels, k, k)
        dxp = np.zeros(self.saved["padded_shape"], dtype=grad.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + stride * out_h:stride, j:j + stride * out_w:stride] += (
                    dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        if padding:
            dxp = dxp[:, :, padding:-padding, padding:-padding]
        return dxp, dw, db


def conv2d(input: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """2D cross-correlation of [B,C_in,H,W] with [C_out,C_in,k,k] plus bias [C_out]."""
    if input.ndim != 4 or kernel.ndim != 4 or bias.ndim != 1:
        raise DimensionError(f"conv2d expects 4D input/kernel and 1D bias, got {input.shape}, {kernel.shape}, {bias.shape}")
    out_channels, in_channels, k, k2 = kernel.shape
    if k != k2 or k % 2 == 0:
        raise ParameterError(f"conv2d needs a square odd kernel, got {k}x{k2}")
    if stride < 1 or padding < 0:
        raise ParameterError(f"conv2d needs stride >= 1 and padding >= 0, got {stride}, {padding}")
    if input.shape[1] != in_channels:
        raise DimensionError(f"conv2d input has {input.shape[1]} channels, kernel expects {in_channels}")
    if bias.shape[0] != out_channels:
        raise DimensionError(f"conv2d bias has {bias.shape[0]} entries, kernel has {out_channels} outputs")
    if min(input.shape[2], input.shape[3]) + 2 * padding < k:
        raise DimensionError(f"conv2d input {input.shape[2:]} is smaller than the {k}x{k} kernel after padding")
    return Conv2d.apply(input, kernel, bias, stride=stride, padding=padding)


# ============================================
# Resampling
# ============================================

class UpsampleNearest(Function):
    kind = "upsample_nearest"

    def forward(self, a, factor: int):
        self.saved["factor"] = factor
        return a.repeat(factor, axis=2).repeat(factor, axis=3)

    def backward(self, grad):
        f = self.saved["factor"]
        b, c, h, w = self.inputs[0].shape
        return (grad.reshape(b, c, h, f, w, f).sum(axis=(3, 5), dtype=np.float64),)


def upsample_nearest(input: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ParameterError(f"upsample factor must be >= 1, got {factor}")
    if input.ndim != 4:
        raise DimensionError(f"upsample_nearest expects [B,C,H,W], got {input.shape}")
    if factor == 1:
        return input
    return UpsampleNearest.apply(input, factor=factor)


# ============================================
# Shape plumbing
# ============================================

class Reshape(Function):
    kind = "reshape"

    def forward(self, a, shape):
        return a.reshape(shape)

    def backward(self, grad):
        return (grad.reshape(self.inputs[0].shape),)


class Transpose(Function):
    kind = "transpose"

    def forward(self, a, axes):
        self.saved["axes"] = axes
        return a.transpose(axes)

    def backward(self, grad):
        return (grad.transpose(np.argsort(self.saved["axes"])),)


class Expand(Function):
    kind = "expand"

    def forward(self, a, shape):
        return np.broadcast_to(a, shape)

    def backward(self, grad):
        src = self.inputs[0].shape
        lead = grad.ndim - len(src)
        g = grad.sum(axis=tuple(range(lead)), dtype=np.float64) if lead else grad
        keep = tuple(i for i, n in enumerate(src) if n == 1 and g.shape[i] != 1)
        if keep:
            g = g.sum(axis=keep, keepdims=True, dtype=np.float64)
        return (g.reshape(src),)


class Concat(Function):
    kind = "concat"

    def forward(self, *arrays, axis: int):
        self.saved["axis"] = axis
        return np.concatenate(arrays, axis=axis)

    def backward(self, grad):
        axis = self.saved["axis"]
        bounds = np.cumsum([t.shape[axis] for t in self.inputs])[:-1]
        return tuple(np.split(grad, bounds, axis=axis))


class Stack(Function):
    kind = "stack"

    def forward(self, *arrays, axis: int):
        self.saved["axis"] = axis
        return np.stack(arrays, axis=axis)

    def backward(self, grad):
        axis = self.saved["axis"]
        return tuple(np.take(grad, i, axis=axis) for i in range(len(self.inputs)))


class Crop(Function):
    kind = "crop"

    def forward(self, a, height: int, width: int):
        return a[..., :height, :width]

    def backward(self, grad):
        full = np.zeros(self.inputs[0].shape, dtype=grad.dtype)
        full[..., :grad.shape[-2], :grad.shape[-1]] = grad
        return (full,)


def reshape(input: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(int(n) for n in shape)
    try:
        np.empty(input.shape, dtype=np.bool_).reshape(shape)
    except ValueError:
        raise DimensionError(f"Cannot reshape {input.shape} to {shape}") from None
    return Reshape.apply(input, shape=shape)


def transpose(input: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(_normalize_axis(ax, input.ndim) for ax in axes)
    if sorted(axes) != list(range(input.ndim)):
        raise ParameterError(f"transpose axes {axes} are not a permutation of {input.ndim} axes")
    return Transpose.apply(input, axes=axes)


def expand(input: Tensor, shape: Sequence[int]) -> Tensor:
    """Explicit broadcast of ``input`` to ``shape`` (numpy rules)."""
    shape = tuple(int(n) for n in shape)
    try:
        np.broadcast_shapes(input.shape, shape)
    except ValueError:
        raise DimensionError(f"Cannot expand {input.shape} to {shape}") from None
    if input.shape == shape:
        return input
    return Expand.apply(input, shape=shape)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ParameterError("concat needs at least one tensor")
    axis = _normalize_axis(axis, tensors[0].ndim)
    return Concat.apply(*tensors, axis=axis)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ParameterError("stack needs at least one tensor")
    if len({t.shape for t in tensors}) != 1:
        raise DimensionError(f"stack needs equal shapes, got {[t.shape for t in tensors]}")
    axis = _normalize_axis(axis, tensors[0].ndim + 1)
    return Stack.apply(*tensors, axis=axis)


def crop(input: Tensor, height: int, width: int) -> Tensor:
    """Keep the top-left ``height`` x ``width`` window of the last two axes."""
    if height > input.shape[-2] or width > input.shape[-1]:
        raise DimensionError(f"Cannot crop {input.shape} to {height}x{width}")
    if (height, width) == input.shape[-2:]:
        return input
    return Crop.apply(input, height=height, width=width)
