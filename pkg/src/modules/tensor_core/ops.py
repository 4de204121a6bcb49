"""
Differentiable dense operations.

Every op takes DenseTensors (python scalars and numpy arrays are wrapped as
constants), computes the forward value with numpy, reports its work to the
active WorkCounter and, when an input requires gradients, records a local
backward rule on the tape.
"""
from __future__ import annotations

import math
from typing import Optional, Sequence, Union

import numpy as np

from src.modules.tensor_core.errors import DimensionError, NumericalDegeneracyError
from src.modules.tensor_core.tensor import (
    BackwardFn,
    DenseTensor,
    TapeEntry,
    current_tape,
    is_grad_enabled,
)
from src.utils.counters import record_work

Operand = Union[DenseTensor, np.ndarray, float, int]

_GELU_C = math.sqrt(2.0 / math.pi)


# =============================================================================
# Plumbing
# =============================================================================

def as_tensor(x: Operand, like: Optional[DenseTensor] = None) -> DenseTensor:
    if isinstance(x, DenseTensor):
        return x
    dtype = like.dtype if like is not None and np.isscalar(x) else None
    return DenseTensor(np.asarray(x, dtype=dtype))


def _result(op: str, data: np.ndarray, inputs: Sequence[DenseTensor],
            backward: BackwardFn, macs: Optional[int] = None) -> DenseTensor:
    if not np.isfinite(data).all():
        raise NumericalDegeneracyError(f"{op}: non-finite values in output of shape {data.shape}")
    record_work(op, data.size if macs is None else macs, data.nbytes)
    out = DenseTensor(data)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        tape = current_tape()
        out.requires_grad = True
        out.is_leaf = False
        out._tape = tape
        tape.record(TapeEntry(op, out, tuple(inputs), backward))
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: DenseTensor, b: DenseTensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# =============================================================================
# Elementwise
# =============================================================================

def add(a: Operand, b: Operand) -> DenseTensor:
    a, b = _pair(a, b)
    _broadcast_shape("add", a, b)
    return _result("add", a.data + b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a: Operand, b: Operand) -> DenseTensor:
    a, b = _pair(a, b)
    _broadcast_shape("sub", a, b)
    return _result("sub", a.data - b.data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a: Operand, b: Operand) -> DenseTensor:
    a, b = _pair(a, b)
    _broadcast_shape("mul", a, b)
    return _result("mul", a.data * b.data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a: Operand, b: Operand) -> DenseTensor:
    a, b = _pair(a, b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data
    return _result("div", out, (a, b),
                   lambda g: (_unbroadcast(g / b.data, a.shape),
                              _unbroadcast(-g * out / b.data, b.shape)))


def neg(a: Operand) -> DenseTensor:
    a = as_tensor(a)
    return _result("neg", -a.data, (a,), lambda g: (-g,))


def exp(a: Operand) -> DenseTensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _result("exp", out, (a,), lambda g: (g * out,))


def log(a: Operand) -> DenseTensor:
    a = as_tensor(a)
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(a.data)
    return _result("log", out, (a,), lambda g: (g / a.data,))


def sqrt(a: Operand) -> DenseTensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        out = np.sqrt(a.data)
    return _result("sqrt", out, (a,), lambda g: (g * 0.5 / out,))


def sigmoid(a: Operand) -> DenseTensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _result("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def gelu(a: Operand) -> DenseTensor:
    """tanh-approximated GELU."""
    a = as_tensor(a)
    x = a.data
    t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dt = (1.0 - t ** 2) * _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * dt),)

    return _result("gelu", out, (a,), backward)


def _pair(a: Operand, b: Operand) -> tuple[DenseTensor, DenseTensor]:
    if isinstance(a, DenseTensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


# =============================================================================
# Reductions and layout
# =============================================================================

def sum(a: Operand, axis: Optional[int | tuple[int, ...]] = None, keepdims: bool = False) -> DenseTensor:
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _result("sum", np.asarray(out), (a,), backward, macs=a.size)


def mean(a: Operand, axis: Optional[int | tuple[int, ...]] = None, keepdims: bool = False) -> DenseTensor:
    a = as_tensor(a)
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return div(sum(a, axis=axis, keepdims=keepdims), float(count))


def transpose(a: Operand, axes: Optional[Sequence[int]] = None) -> DenseTensor:
    """Permute axes; the default swaps the last two."""
    a = as_tensor(a)
    if axes is None:
        if a.ndim < 2:
            raise DimensionError(f"transpose: need at least 2 dimensions, got {a.shape}")
        axes = list(range(a.ndim - 2)) + [a.ndim - 1, a.ndim - 2]
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _result("transpose", np.transpose(a.data, axes), (a,),
                   lambda g: (np.transpose(g, inverse),), macs=0)


def reshape(a: Operand, shape: Sequence[int]) -> DenseTensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError:
        raise DimensionError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return _result("reshape", out, (a,), lambda g: (g.reshape(a.shape),), macs=0)


def broadcast_to(a: Operand, shape: Sequence[int]) -> DenseTensor:
    a = as_tensor(a)
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape).copy()
    except ValueError:
        raise DimensionError(f"broadcast_to: cannot broadcast {a.shape} to {shape}") from None
    return _result("broadcast_to", out, (a,), lambda g: (_unbroadcast(g, a.shape),), macs=0)


def concat(tensors: Sequence[Operand], axis: int = -1) -> DenseTensor:
    parts = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: incompatible shapes {[p.shape for p in parts]}") from None
    splits = np.cumsum([p.shape[axis] for p in parts])[:-1]
    return _result("concat", out, parts, lambda g: tuple(np.split(g, splits, axis=axis)))


def cumsum(a: Operand, axis: int) -> DenseTensor:
    a = as_tensor(a)
    out = np.cumsum(a.data, axis=axis)
    return _result("cumsum", out, (a,),
                   lambda g: (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),))


def gather_lastdim(a: Operand, index: np.ndarray) -> DenseTensor:
    """out[..., j] = a[..., index[..., j]]; gradient scatters additively."""
    a = as_tensor(a)
    index = np.asarray(index, dtype=np.int64)
    out_shape = np.broadcast_shapes(a.shape[:-1], index.shape[:-1]) + index.shape[-1:]
    if out_shape[:-1] != a.shape[:-1]:
        raise DimensionError(f"gather_lastdim: index {index.shape} does not fit {a.shape}")
    idx = np.broadcast_to(index, out_shape)
    out = np.take_along_axis(a.data, idx, axis=-1)

    def backward(g):
        rows = a.size // a.shape[-1]
        ga = np.zeros((rows, a.shape[-1]), dtype=g.dtype)
        np.add.at(ga, (np.arange(rows)[:, None], idx.reshape(rows, -1)), g.reshape(rows, -1))
        return (ga.reshape(a.shape),)

    return _result("gather_lastdim", out, (a,), backward)


# =============================================================================
# Linear algebra
# =============================================================================

def matmul(a: Operand, b: Operand) -> DenseTensor:
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul: operands need 2+ dimensions, got {a.shape} x {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ: {a.shape} x {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise DimensionError(f"matmul: batch dimensions differ: {a.shape} x {b.shape}") from None
    out = np.matmul(a.data, b.data)

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result("matmul", out, (a, b), backward, macs=out.size * a.shape[-1])


def softmax_lastdim(x: Operand, mask: Optional[np.ndarray] = None) -> DenseTensor:
    """
    Softmax over the last axis with max subtraction.

    With a boolean `mask`, masked-out positions get probability 0; a slice
    with nothing kept becomes all zeros.
    """
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise DimensionError(f"softmax_lastdim: empty last dimension in {x.shape}")
    z = x.data
    if mask is None:
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        y = e / e.sum(axis=-1, keepdims=True)
    else:
        keep = np.broadcast_to(np.asarray(mask, dtype=bool), z.shape)
        mx = np.where(keep, z, -np.inf).max(axis=-1, keepdims=True)
        mx = np.where(np.isfinite(mx), mx, 0.0)
        e = np.where(keep, np.exp(np.where(keep, z - mx, 0.0)), 0.0)
        s = e.sum(axis=-1, keepdims=True)
        y = e / np.where(s > 0, s, 1.0)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _result("softmax", y.astype(z.dtype, copy=False), (x,), backward, macs=3 * z.size)


def log_softmax_lastdim(x: Operand) -> DenseTensor:
    x = as_tensor(x)
    if x.ndim == 0 or x.shape[-1] < 1:
        raise DimensionError(f"log_softmax_lastdim: empty last dimension in {x.shape}")
    z = x.data - x.data.max(axis=-1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(out)
    return _result("log_softmax", out, (x,),
                   lambda g: (g - p * g.sum(axis=-1, keepdims=True),), macs=3 * z.size)


# =============================================================================
# Convolution and resizing
# =============================================================================

def conv2d(x: Operand, weight: Operand, bias: Optional[Operand] = None,
           stride: int | tuple[int, int] = 1, causal: bool = False) -> DenseTensor:
    """
    3x3 cross-correlation over [C_in, H, W] with zero padding 1.

    With `causal`, the kernel row that looks one row below the output row is
    dropped, so output row r never reads input rows > r (height stride 1).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 3 or weight.ndim != 4:
        raise DimensionError(f"conv2d: expected x[C,H,W] and w[O,C,3,3], got {x.shape}, {weight.shape}")
    if weight.shape[2:] != (3, 3):
        raise DimensionError(f"conv2d: kernel size must be 3, got {weight.shape[2:]}")
    if weight.shape[1] != x.shape[0]:
        raise DimensionError(f"conv2d: channel mismatch, input has {x.shape[0]}, kernel expects {weight.shape[1]}")
    sh, sw = (stride, stride) if isinstance(stride, int) else tuple(stride)
    if sh < 1 or sw < 1:
        raise DimensionError(f"conv2d: stride must be positive, got {(sh, sw)}")

    c_in, height, width = x.shape
    c_out = weight.shape[0]
    out_h = (height - 1) // sh + 1
    out_w = (width - 1) // sw + 1
    xp = np.pad(x.data, ((0, 0), (1, 1), (1, 1)))
    taps = [(ky, kx) for ky in range(3) for kx in range(3) if not (causal and ky == 2)]

    def window(ky: int, kx: int) -> tuple[slice, slice, slice]:
        return (slice(None),
                slice(ky, ky + sh * (out_h - 1) + 1, sh),
                slice(kx, kx + sw * (out_w - 1) + 1, sw))

    out = np.zeros((c_out, out_h, out_w), dtype=np.result_type(x.dtype, weight.dtype))
    for ky, kx in taps:
        out += np.tensordot(weight.data[:, :, ky, kx], xp[window(ky, kx)], axes=(1, 0))

    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (c_out,):
            raise DimensionError(f"conv2d: bias shape {bias.shape} does not match {c_out} output channels")
        out += bias.data[:, None, None]
        inputs.append(bias)

    def backward(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(weight.data)
        for ky, kx in taps:
            win = window(ky, kx)
            gw[:, :, ky, kx] = np.tensordot(g, xp[win], axes=([1, 2], [1, 2]))
            gxp[win] += np.tensordot(weight.data[:, :, ky, kx], g, axes=(0, 0))
        grads = [gxp[:, 1:-1, 1:-1], gw]
        if bias is not None:
            grads.append(g.sum(axis=(1, 2)))
        return tuple(grads)

    return _result("conv2d", out, inputs, backward, macs=out.size * c_in * len(taps))


def nn_indices(old: int, new: int) -> np.ndarray:
    """Nearest-neighbour source index for each destination cell: floor(i*old/new)."""
    return (np.arange(new, dtype=np.int64) * old) // new


def nn_interpolate(x: Operand, new_size: int, axis: int = -1) -> DenseTensor:
    x = as_tensor(x)
    if new_size < 1:
        raise DimensionError(f"nn_interpolate: new_size must be >= 1, got {new_size}")
    axis = axis % x.ndim
    idx = nn_indices(x.shape[axis], new_size)
    out = np.take(x.data, idx, axis=axis)

    def backward(g):
        gm = np.moveaxis(g, axis, 0)
        gx = np.zeros((x.shape[axis],) + gm.shape[1:], dtype=g.dtype)
        np.add.at(gx, idx, gm)
        return (np.moveaxis(gx, 0, axis),)

    return _result("nn_interpolate", out, (x,), backward)


# =============================================================================
# Composite helpers
# =============================================================================

def mse(a: Operand, b: Operand) -> DenseTensor:
    diff = sub(a, b)
    return mean(mul(diff, diff))


def linear(x: Operand, weight: DenseTensor, bias: Optional[DenseTensor] = None) -> DenseTensor:
    out = matmul(x, weight)
    return add(out, bias) if bias is not None else out
