"""Dense tensors with reverse-mode automatic differentiation.

Every primitive builds a new :class:`Tensor` whose ``_backward`` closure maps
the output adjoint to one adjoint per parent. :func:`backward` walks a
:class:`Tape` (the topologically ordered nodes reachable from a scalar) in
reverse and accumulates adjoints, so shared subexpressions add up.
"""

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .config import FEATURE_BLOCK_ROWS, GROUP_NORM_EPS, LAYER_NORM_EPS

PRECISIONS = {"float64": np.float64, "float32": np.float32}

_dtype = np.float64


def set_precision(name: str) -> None:
    """Select the global floating-point mode ("float64" or "float32")."""
    global _dtype
    if name not in PRECISIONS:
        raise ValueError(f"Unknown precision: {name}. Must be one of {sorted(PRECISIONS)}.")
    _dtype = PRECISIONS[name]


def get_dtype():
    return _dtype


ArrayLike = Union["Tensor", np.ndarray, float, int, Sequence]


class Tensor:
    """A dense array that optionally records how it was computed."""

    __array_priority__ = 100

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple = (),
        backward_fn: Optional[Callable] = None,
        op: str = "",
    ):
        array = np.asarray(data)
        if array.dtype != _dtype:
            array = array.astype(_dtype)
        self.data = array
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self._parents = parents
        self._backward = backward_fn
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag}, op={self.op!r})"

    # Operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(value: ArrayLike) -> Tensor:
    if isinstance(value, Tensor):
        return value
    return Tensor(value)


def parameter(value) -> Tensor:
    """Create a trainable leaf."""
    return Tensor(np.array(value, copy=True), requires_grad=True)


def _node(data, parents: tuple, backward_fn: Callable, op: str) -> Tensor:
    if any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=parents, backward_fn=backward_fn, op=op)
    return Tensor(data, op=op)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# Tape and backward


@dataclass
class Tape:
    """Nodes reachable from an output, parents before children."""

    nodes: list
    leaves: list

    @classmethod
    def record(cls, output: Tensor) -> "Tape":
        order = []
        visited = set()
        stack = [(output, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))
        leaves = [node for node in order if node.is_leaf]
        return cls(nodes=order, leaves=leaves)


def backward(tape: Optional[Tape], scalar_output: Tensor) -> dict:
    """Return {leaf: gradient} for every leaf on the tape and store it on ``leaf.grad``."""
    if scalar_output.ndim != 0:
        raise ValueError(f"backward needs a 0-dimensional output, got shape {scalar_output.shape}")
    if not scalar_output.requires_grad:
        return {}
    if tape is None:
        tape = Tape.record(scalar_output)
    if not tape.nodes or tape.nodes[-1] is not scalar_output:
        raise ValueError("scalar_output is not the final node of the tape")

    adjoints = {id(scalar_output): np.ones((), dtype=scalar_output.data.dtype)}
    for node in reversed(tape.nodes):
        grad = adjoints.get(id(node))
        if grad is None or node.is_leaf:
            continue
        del adjoints[id(node)]
        for parent, parent_grad in zip(node._parents, node._backward(grad)):
            if parent_grad is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in adjoints:
                adjoints[key] = adjoints[key] + parent_grad
            else:
                adjoints[key] = parent_grad

    result = {}
    for leaf in tape.leaves:
        grad = adjoints.get(id(leaf))
        if grad is None:
            grad = np.zeros_like(leaf.data)
        leaf.grad = grad
        result[leaf] = grad
    return result


# Elementwise arithmetic


def add(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, (a, b), _backward, "add")


def sub(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, (a, b), _backward, "sub")


def mul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _node(a.data * b.data, (a, b), _backward, "mul")


def div(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _node(a.data / b.data, (a, b), _backward, "div")


def neg(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _node(-a.data, (a,), lambda g: (-g,), "neg")


def power(a: ArrayLike, exponent: float) -> Tensor:
    a = as_tensor(a)
    out = a.data ** exponent

    def _backward(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _node(out, (a,), _backward, "power")


def exp(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _node(out, (a,), lambda g: (g * out,), "exp")


def log(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _node(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def cos(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _node(np.cos(a.data), (a,), lambda g: (-g * np.sin(a.data),), "cos")


def sin(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    return _node(np.sin(a.data), (a,), lambda g: (g * np.cos(a.data),), "sin")


def sqrt(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _node(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def rsqrt(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = 1.0 / np.sqrt(a.data)
    return _node(out, (a,), lambda g: (-0.5 * g * out / a.data,), "rsqrt")


def tanh(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    out = _sigmoid(a.data)
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    ex = np.exp(x[~positive])
    out[~positive] = ex / (1.0 + ex)
    return out


# Activations


def relu(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _node(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def leaky_relu(a: ArrayLike, slope: float = 0.01) -> Tensor:
    a = as_tensor(a)
    scale = np.where(a.data > 0, 1.0, slope).astype(a.data.dtype)
    return _node(a.data * scale, (a,), lambda g: (g * scale,), "leaky_relu")


def elu(a: ArrayLike, alpha: float = 1.0) -> Tensor:
    a = as_tensor(a)
    negative = alpha * np.expm1(np.minimum(a.data, 0.0))
    out = np.where(a.data > 0, a.data, negative)
    slope = np.where(a.data > 0, 1.0, negative + alpha)
    return _node(out, (a,), lambda g: (g * slope,), "elu")


def silu(a: ArrayLike) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid(a.data)
    out = a.data * s

    def _backward(g):
        return (g * (s + a.data * s * (1.0 - s)),)

    return _node(out, (a,), _backward, "silu")


def softmax(a: ArrayLike, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=axis, keepdims=True)

    def _backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), _backward, "softmax")


def log_softmax(a: ArrayLike, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def _backward(g):
        return (g - probs * g.sum(axis=axis, keepdims=True),)

    return _node(out, (a,), _backward, "log_softmax")


# Normalization


def _normalize_last(x: np.ndarray, eps: float):
    mu = x.mean(axis=-1, keepdims=True)
    centered = x - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    return centered * inv, inv


def _normalize_last_backward(dxhat: np.ndarray, xhat: np.ndarray, inv: np.ndarray) -> np.ndarray:
    n = xhat.shape[-1]
    return inv / n * (
        n * dxhat
        - dxhat.sum(axis=-1, keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
    )


def layer_norm(
    x: ArrayLike,
    weight: Optional[ArrayLike] = None,
    bias: Optional[ArrayLike] = None,
    eps: float = LAYER_NORM_EPS,
) -> Tensor:
    """Normalize over the last axis; affine only when weight/bias are given."""
    x = as_tensor(x)
    xhat, inv = _normalize_last(x.data, eps)
    parents = [x]
    out = xhat
    w = b = None
    if weight is not None:
        w = as_tensor(weight)
        parents.append(w)
        out = out * w.data
    if bias is not None:
        b = as_tensor(bias)
        parents.append(b)
        out = out + b.data
    reduce_axes = tuple(range(x.ndim - 1))

    def _backward(g):
        dxhat = g * w.data if w is not None else g
        grads = [_normalize_last_backward(dxhat, xhat, inv)]
        if w is not None:
            grads.append((g * xhat).sum(axis=reduce_axes))
        if b is not None:
            grads.append(g.sum(axis=reduce_axes))
        return grads

    return _node(out, tuple(parents), _backward, "layer_norm")


def group_norm(
    x: ArrayLike,
    groups: int,
    weight: Optional[ArrayLike] = None,
    bias: Optional[ArrayLike] = None,
    eps: float = GROUP_NORM_EPS,
) -> Tensor:
    """Group normalization of channels-first input (n, c, ...)."""
    x = as_tensor(x)
    n, c = x.shape[0], x.shape[1]
    if groups < 1 or c % groups != 0:
        raise ValueError(f"group_norm: {groups} groups do not divide {c} channels")
    grouped = x.data.reshape(n, groups, -1)
    xhat_g, inv = _normalize_last(grouped, eps)
    xhat = xhat_g.reshape(x.shape)
    channel_shape = (1, c) + (1,) * (x.ndim - 2)
    parents = [x]
    out = xhat
    w = b = None
    if weight is not None:
        w = as_tensor(weight)
        parents.append(w)
        out = out * w.data.reshape(channel_shape)
    if bias is not None:
        b = as_tensor(bias)
        parents.append(b)
        out = out + b.data.reshape(channel_shape)
    reduce_axes = (0,) + tuple(range(2, x.ndim))

    def _backward(g):
        dxhat = g * w.data.reshape(channel_shape) if w is not None else g
        dx = _normalize_last_backward(dxhat.reshape(n, groups, -1), xhat_g, inv)
        grads = [dx.reshape(x.shape)]
        if w is not None:
            grads.append((g * xhat).sum(axis=reduce_axes))
        if b is not None:
            grads.append(g.sum(axis=reduce_axes))
        return grads

    return _node(out, tuple(parents), _backward, "group_norm")


# Linear algebra and convolution


def matmul(a: ArrayLike, b: ArrayLike) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")

    def _backward(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _node(a.data @ b.data, (a, b), _backward, "matmul")


def conv2d(x: ArrayLike, weight: ArrayLike, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of (n, c_in, h, w) input with (c_out, c_in, k, k) kernels."""
    x, weight = as_tensor(x), as_tensor(weight)
    n, c_in, height, width = x.shape
    c_out, w_in, kh, kw = weight.shape
    if w_in != c_in:
        raise ValueError(f"conv2d: kernel expects {w_in} input channels, got {c_in}")
    padded = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out_h = (height + 2 * padding - kh) // stride + 1
    out_w = (width + 2 * padding - kw) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(padded, (kh, kw), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * out_h * out_w, c_in * kh * kw)
    kernel = weight.data.reshape(c_out, -1)
    out = (cols @ kernel.T).reshape(n, out_h, out_w, c_out).transpose(0, 3, 1, 2)

    def _backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, c_out)
        gw = (g2.T @ cols).reshape(weight.shape)
        gcols = (g2 @ kernel).reshape(n, out_h, out_w, c_in, kh, kw)
        gpad = np.zeros_like(padded)
        for i in range(kh):
            for j in range(kw):
                gpad[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += (
                    gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
                )
        gx = gpad[:, :, padding : padding + height, padding : padding + width]
        return gx, gw

    return _node(out, (x, weight), _backward, "conv2d")


def avg_pool2d(x: ArrayLike, kernel: int, stride: Optional[int] = None) -> Tensor:
    x = as_tensor(x)
    stride = stride or kernel
    height, width = x.shape[2], x.shape[3]
    out_h = (height - kernel) // stride + 1
    out_w = (width - kernel) // stride + 1
    scale = 1.0 / (kernel * kernel)
    out = np.zeros(x.shape[:2] + (out_h, out_w), dtype=x.data.dtype)
    for i in range(kernel):
        for j in range(kernel):
            out += x.data[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride]
    out *= scale

    def _backward(g):
        gx = np.zeros_like(x.data)
        for i in range(kernel):
            for j in range(kernel):
                gx[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += g * scale
        return (gx,)

    return _node(out, (x,), _backward, "avg_pool2d")


def max_pool2d(x: ArrayLike, kernel: int, stride: Optional[int] = None) -> Tensor:
    x = as_tensor(x)
    stride = stride or kernel
    height, width = x.shape[2], x.shape[3]
    out_h = (height - kernel) // stride + 1
    out_w = (width - kernel) // stride + 1
    windows = np.lib.stride_tricks.sliding_window_view(x.data, (kernel, kernel), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride][:, :, :out_h, :out_w]
    flat = windows.reshape(windows.shape[:4] + (kernel * kernel,))
    argmax = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, argmax[..., None], axis=-1)[..., 0]

    def _backward(g):
        gflat = np.zeros(flat.shape, dtype=g.dtype)
        np.put_along_axis(gflat, argmax[..., None], g[..., None], axis=-1)
        gflat = gflat.reshape(flat.shape[:4] + (kernel, kernel))
        gx = np.zeros_like(x.data)
        for i in range(kernel):
            for j in range(kernel):
                gx[:, :, i : i + stride * out_h : stride, j : j + stride * out_w : stride] += gflat[..., i, j]
        return (gx,)

    return _node(out, (x,), _backward, "max_pool2d")


def adaptive_avg_pool2d(x: ArrayLike, output_size=(1, 1)) -> Tensor:
    x = as_tensor(x)
    out_h, out_w = output_size
    height, width = x.shape[2], x.shape[3]
    rows = [(i * height // out_h, -(-(i + 1) * height // out_h)) for i in range(out_h)]
    cols = [(j * width // out_w, -(-(j + 1) * width // out_w)) for j in range(out_w)]
    out = np.empty(x.shape[:2] + (out_h, out_w), dtype=x.data.dtype)
    for i, (r0, r1) in enumerate(rows):
        for j, (c0, c1) in enumerate(cols):
            out[:, :, i, j] = x.data[:, :, r0:r1, c0:c1].mean(axis=(2, 3))

    def _backward(g):
        gx = np.zeros_like(x.data)
        for i, (r0, r1) in enumerate(rows):
            for j, (c0, c1) in enumerate(cols):
                area = (r1 - r0) * (c1 - c0)
                gx[:, :, r0:r1, c0:c1] += g[:, :, i, j][:, :, None, None] / area
        return (gx,)

    return _node(out, (x,), _backward, "adaptive_avg_pool2d")


def fourier_linear(
    x: np.ndarray, frequencies: np.ndarray, weight: ArrayLike, block_rows: int = FEATURE_BLOCK_ROWS
) -> Tensor:
    """Compute [cos(x Bᵀ), sin(x Bᵀ)] @ Wᵀ without storing the feature matrix.

    ``x`` and ``frequencies`` are constants; only ``weight`` (shape d × 2m)
    receives a gradient. Features are rebuilt block-wise in the adjoint.
    """
    weight = as_tensor(weight)
    x = np.asarray(x, dtype=weight.data.dtype)
    frequencies = np.asarray(frequencies, dtype=weight.data.dtype)
    m = frequencies.shape[0]
    if weight.shape[1] != 2 * m:
        raise ValueError(f"fourier_linear: weight expects {weight.shape[1]} features, encoding gives {2 * m}")

    def features(start: int, stop: int) -> np.ndarray:
        proj = x[start:stop] @ frequencies.T
        return np.concatenate([np.cos(proj), np.sin(proj)], axis=1)

    rows = x.shape[0]
    out = np.empty((rows, weight.shape[0]), dtype=weight.data.dtype)
    for start in range(0, rows, block_rows):
        stop = min(start + block_rows, rows)
        out[start:stop] = features(start, stop) @ weight.data.T

    def _backward(g):
        gw = np.zeros_like(weight.data)
        for start in range(0, rows, block_rows):
            stop = min(start + block_rows, rows)
            gw += g[start:stop].T @ features(start, stop)
        return (gw,)

    return _node(out, (weight,), _backward, "fourier_linear")


# Indexing and shape


def gather(x: ArrayLike, indices, axis: int = 0) -> Tensor:
    """Index lookup along ``axis`` with an integer array of any shape."""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.int64)
    out = np.take(x.data, indices, axis=axis)

    def _backward(g):
        gx = np.zeros_like(x.data)
        moved = np.moveaxis(gx, axis, 0)
        gmoved = np.moveaxis(g, list(range(axis, axis + indices.ndim)), list(range(indices.ndim)))
        np.add.at(moved, indices, gmoved)
        return (gx,)

    return _node(out, (x,), _backward, "gather")


def scatter_add(src: ArrayLike, indices, size: int) -> Tensor:
    """Sum rows of ``src`` into ``size`` output rows: out[indices[i]] += src[i]."""
    src = as_tensor(src)
    indices = np.asarray(indices, dtype=np.int64)
    if indices.shape != src.shape[:1]:
        raise ValueError(f"scatter_add: {indices.shape[0]} indices for {src.shape[0]} rows")
    out = np.zeros((size,) + src.shape[1:], dtype=src.data.dtype)
    np.add.at(out, indices, src.data)
    return _node(out, (src,), lambda g: (g[indices],), "scatter_add")


def _is_basic_index(key) -> bool:
    keys = key if isinstance(key, tuple) else (key,)
    return all(isinstance(k, (slice, int, type(None), type(Ellipsis))) for k in keys)


def getitem(x: ArrayLike, key) -> Tensor:
    x = as_tensor(x)
    out = x.data[key]

    def _backward(g):
        gx = np.zeros_like(x.data)
        if _is_basic_index(key):
            gx[key] = g
        else:
            np.add.at(gx, key, g)
        return (gx,)

    return _node(out, (x,), _backward, "getitem")


def concat(tensors: Sequence[ArrayLike], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _node(out, tuple(tensors), _backward, "concat")


def reshape(x: ArrayLike, shape) -> Tensor:
    x = as_tensor(x)
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: ArrayLike, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inverse = np.argsort(axes)
    return _node(x.data.transpose(axes), (x,), lambda g: (g.transpose(inverse),), "transpose")


# Reductions


def _expand(g: np.ndarray, shape: tuple, axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else axis
        axes = tuple(a % len(shape) for a in axes)
        for a in sorted(axes):
            g = np.expand_dims(g, a)
    return np.broadcast_to(g, shape)


def _count(shape: tuple, axis) -> int:
    if axis is None:
        return int(np.prod(shape))
    axes = (axis,) if isinstance(axis, int) else axis
    return int(np.prod([shape[a] for a in axes]))


def tsum(x: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)
    return _node(out, (x,), lambda g: (_expand(g, x.shape, axis, keepdims).copy(),), "sum")


def mean(x: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    count = _count(x.shape, axis)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    return _node(out, (x,), lambda g: (_expand(g, x.shape, axis, keepdims) / count,), "mean")


def std(x: ArrayLike, axis=None, keepdims: bool = False) -> Tensor:
    """Population standard deviation; its gradient is taken as 0 where std is 0."""
    x = as_tensor(x)
    count = _count(x.shape, axis)
    centered = x.data - x.data.mean(axis=axis, keepdims=True)
    out = np.sqrt((centered * centered).mean(axis=axis, keepdims=keepdims))

    def _backward(g):
        s = _expand(out, x.shape, axis, keepdims)
        gs = _expand(g, x.shape, axis, keepdims)
        safe = np.where(s > 0, s, 1.0)
        return (np.where(s > 0, gs * centered / (count * safe), 0.0),)

    return _node(out, (x,), _backward, "std")


def cumsum(x: ArrayLike, axis: int = -1) -> Tensor:
    x = as_tensor(x)

    def _backward(g):
        return (np.flip(np.cumsum(np.flip(g, axis=axis), axis=axis), axis=axis),)

    return _node(np.cumsum(x.data, axis=axis), (x,), _backward, "cumsum")


def dropout(x: ArrayLike, rate: float, rng: Optional[np.random.Generator]) -> Tensor:
    """Inverted dropout; identity when ``rng`` is None or ``rate`` is 0."""
    x = as_tensor(x)
    if rng is None or rate <= 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.shape) < keep).astype(x.data.dtype) / keep
    return mul(x, mask)


# Gradient checking


@dataclass
class GradCheckReport:
    """Worst relative error between analytic and central-difference gradients."""

    max_error: float
    coordinate: Optional[tuple] = None
    failure: Optional[str] = None

    @property
    def finite(self) -> bool:
        return self.failure is None

    def passed(self, tolerance: float) -> bool:
        return self.finite and self.max_error < tolerance


def grad_check(
    function: Callable[..., Tensor],
    point,
    step: float = 1e-6,
    floor: float = 1e-12,
) -> GradCheckReport:
    """Compare analytic gradients of ``function`` at ``point`` to central differences.

    ``point`` is one array or a list of arrays, passed positionally as tensors.
    ``coordinate`` is (argument index, flat index) of the worst entry.
    """
    if step <= 0:
        raise ValueError(f"grad_check step must be positive, got {step}")
    arrays = [point] if isinstance(point, np.ndarray) else list(point)
    arrays = [np.array(a, dtype=_dtype, copy=True) for a in arrays]

    leaves = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = function(*leaves)
    if not np.all(np.isfinite(out.data)):
        return GradCheckReport(math.inf, None, "non-finite value at the base point")
    grads = backward(Tape.record(out), out)
    analytic = [grads.get(leaf, np.zeros_like(leaf.data)) for leaf in leaves]

    worst = GradCheckReport(0.0)
    for arg, array in enumerate(arrays):
        for flat in range(array.size):
            values = []
            for sign in (1.0, -1.0):
                shifted = [a.copy() for a in arrays]
                shifted[arg].reshape(-1)[flat] += sign * step
                value = float(function(*[Tensor(a) for a in shifted]).data)
                if not math.isfinite(value):
                    return GradCheckReport(math.inf, (arg, flat), f"non-finite value at argument {arg}, index {flat}")
                values.append(value)
            numeric = (values[0] - values[1]) / (2.0 * step)
            exact = float(analytic[arg].reshape(-1)[flat])
            error = abs(exact - numeric) / max(abs(exact), abs(numeric), floor)
            if error > worst.max_error:
                worst = GradCheckReport(error, (arg, flat))
    return worst
