"""Forward/backward kernels over :class:`Tensor`.

Each kernel checks operand shapes, computes the forward value with numpy,
rejects non-finite results, and registers the vector-Jacobian product.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.special import expit

from .tensor import ShapeError, Tensor, as_tensor, make_result

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _broadcast_shape(kernel: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{kernel}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# -- elementwise arithmetic ------------------------------------------------

def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("add", a, b)
    return make_result(
        "add", a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("sub", a, b)
    return make_result(
        "sub", a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape("mul", a, b)
    return make_result(
        "mul", a.data * b.data, (a, b),
        lambda g: (
            _unbroadcast(g * b.data, a.shape) if a.requires_grad else None,
            _unbroadcast(g * a.data, b.shape) if b.requires_grad else None,
        ),
    )


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product over the last two axes, broadcasting leading axes."""
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul: batch axes of {a.shape} and {b.shape} do not broadcast") from None

    def backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return make_result("matmul", a.data @ b.data, (a, b), backward)


# -- nonlinearities --------------------------------------------------------

def softmax(x: Tensor, axis: int = -1) -> Tensor:
    if axis != -1 and axis != x.ndim - 1:
        raise ShapeError(f"softmax: only the last axis is supported, got axis={axis} for shape {x.shape}")
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_result("softmax", y, (x,), backward)


def rms_norm(x: Tensor, eps: float = 1e-6) -> Tensor:
    """x / sqrt(mean(x**2) + eps) over the last axis; no learned scale."""
    ms = (x.data * x.data).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(ms + eps)
    y = x.data * inv

    def backward(g):
        return (inv * (g - y * (g * y).mean(axis=-1, keepdims=True)),)

    return make_result("rms_norm", y, (x,), backward)


def swish(x: Tensor) -> Tensor:
    s = expit(x.data)

    def backward(g):
        return (g * (s + x.data * s * (1.0 - s)),)

    return make_result("swish", x.data * s, (x,), backward)


def gelu(x: Tensor) -> Tensor:
    """tanh-approximated GELU."""
    xd = x.data
    sq = xd * xd
    t = np.tanh(_SQRT_2_OVER_PI * xd * (1.0 + 0.044715 * sq))
    y = 0.5 * xd * (1.0 + t)

    def backward(g):
        dinner = _SQRT_2_OVER_PI * (1.0 + 3 * 0.044715 * sq)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)

    return make_result("gelu", y, (x,), backward)


# -- indexing and layout ---------------------------------------------------

def embedding_gather(table: Tensor, ids) -> Tensor:
    """Rows of a 2-D ``table`` selected by integer ``ids`` (any shape)."""
    ids = np.asarray(ids)
    if table.ndim != 2:
        raise ShapeError(f"embedding_gather: table must be 2-D, got shape {table.shape}")
    if ids.dtype.kind not in "iu":
        raise ShapeError(f"embedding_gather: ids must be integers, got dtype {ids.dtype}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(
            f"embedding_gather: id out of range [0, {table.shape[0]}) (min {ids.min()}, max {ids.max()})"
        )

    def backward(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (out,)

    return make_result("embedding_gather", table.data[ids], (table,), backward)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat: no operands")
    nd = tensors[0].ndim
    ax = axis % nd
    for t in tensors[1:]:
        if t.ndim != nd or any(t.shape[i] != tensors[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: shapes {tensors[0].shape} and {t.shape} differ off axis {axis}")
    sizes = [t.shape[ax] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=ax) if t.requires_grad else None
            for i, t in enumerate(tensors)
        )

    return make_result("concat", np.concatenate([t.data for t in tensors], axis=ax), tensors, backward)


def slice(x: Tensor, index) -> Tensor:  # noqa: A001 - kernel name
    try:
        y = x.data[index]
    except IndexError as exc:
        raise ShapeError(f"slice: index {index!r} invalid for shape {x.shape}: {exc}") from None

    def backward(g):
        out = np.zeros_like(x.data)
        if _is_advanced(index):
            np.add.at(out, index, g)
        else:
            out[index] = g
        return (out,)

    return make_result("slice", np.array(y, copy=True), (x,), backward)


def _is_advanced(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def reshape(x: Tensor, shape) -> Tensor:
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {tuple(shape)}") from None
    return make_result("reshape", y, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(range(x.ndim))[::-1] if not axes else tuple(a % x.ndim for a in axes)
    if sorted(axes) != list(range(x.ndim)):
        raise ShapeError(f"transpose: axes {axes} invalid for shape {x.shape}")
    inverse = np.argsort(axes)
    return make_result("transpose", x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),))


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    y = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result("sum", np.asarray(y), (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / n)


# -- positional encodings --------------------------------------------------

def sinusoidal_frequencies(width: int, min_freq: float = 1.0, max_freq: float = 1e4) -> np.ndarray:
    half = width // 2
    if half == 1:
        return np.array([min_freq])
    return min_freq * (max_freq / min_freq) ** (np.arange(half) / (half - 1))


def sinusoidal_encode(t, width: int) -> Tensor:
    """Sinusoidal features of a scalar (or array of scalars) ``t``.

    Layout is ``[sin(t f_0) .. sin(t f_{k-1}), cos(t f_0) .. cos(t f_{k-1})]``
    with ``k = width // 2`` frequencies spaced geometrically from 1 to 1e4.
    """
    if width < 2 or width % 2:
        raise ShapeError(f"sinusoidal_encode: width must be a positive even number, got {width}")
    t = as_tensor(t)
    freqs = sinusoidal_frequencies(width).astype(t.dtype)
    ang = t.data[..., None] * freqs
    s, c = np.sin(ang), np.cos(ang)

    def backward(g):
        half = width // 2
        return (((g[..., :half] * c - g[..., half:] * s) * freqs).sum(axis=-1),)

    return make_result("sinusoidal_encode", np.concatenate([s, c], axis=-1), (t,), backward)


def rotary_tables(positions: np.ndarray, head_dim: int, base: float = 10000.0, dtype=np.float64):
    """cos/sin tables of shape ``positions.shape + (head_dim // 2,)``."""
    half = head_dim // 2
    inv_freq = base ** (-np.arange(half) / half)
    ang = np.asarray(positions, dtype=np.float64)[..., None] * inv_freq
    return np.cos(ang).astype(dtype), np.sin(ang).astype(dtype)


def rotary_apply(x: Tensor, cos: np.ndarray, sin: np.ndarray) -> Tensor:
    """Rotate channel pairs ``(i, i + d/2)`` of the last axis by position-dependent angles."""
    half = x.shape[-1] // 2
    if x.shape[-1] % 2 or cos.shape[-1] != half:
        raise ShapeError(f"rotary_apply: x shape {x.shape} incompatible with table shape {cos.shape}")
    try:
        np.broadcast_shapes(x.shape[:-1] + (half,), cos.shape)
    except ValueError:
        raise ShapeError(f"rotary_apply: x shape {x.shape} does not broadcast with table {cos.shape}") from None
    x1, x2 = x.data[..., :half], x.data[..., half:]
    y = np.concatenate([x1 * cos - x2 * sin, x2 * cos + x1 * sin], axis=-1)

    def backward(g):
        g1, g2 = g[..., :half], g[..., half:]
        return (_unbroadcast(np.concatenate([g1 * cos + g2 * sin, g2 * cos - g1 * sin], axis=-1), x.shape),)

    return make_result("rotary_apply", y, (x,), backward)


def kernels() -> dict:
    """Name -> callable for the core kernel set."""
    return {
        "matmul": matmul,
        "add": add,
        "mul": mul,
        "softmax": softmax,
        "rms_norm": rms_norm,
        "swish": swish,
        "gelu": gelu,
        "embedding_gather": embedding_gather,
        "concat": concat,
        "slice": slice,
        "sinusoidal_encode": sinusoidal_encode,
        "rotary_apply": rotary_apply,
    }


__all__ = [name for name in kernels()] + [
    "sub", "reshape", "transpose", "sum", "mean", "kernels", "rotary_tables", "sinusoidal_frequencies",
]
