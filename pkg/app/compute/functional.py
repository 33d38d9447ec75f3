"""
Differentiable primitives. Every function takes and returns Tensors and
records one tape node carrying its vector-Jacobian product.
"""

from typing import Optional, Sequence

import numpy as np

from app.compute.tensor import Tensor, as_tensor, current_graph, make_result
from app.errors import ContractViolation, ShapeError


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def add(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_result(
        "add", a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_result(
        "sub", a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)
    return make_result(
        "mul", a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got dims {a.dims} and {b.dims}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims differ: {a.dims} @ {b.dims}")

    def vjp(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_result("matmul", a.data @ b.data, (a, b), vjp)


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    inverse = np.argsort(axes)
    return make_result("transpose", np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inverse),))


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return make_result("reshape", x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def relu(x: Tensor) -> Tensor:
    active = x.data > 0
    return make_result("relu", np.where(active, x.data, 0).astype(x.dtype), (x,), lambda g: (g * active,))


def sigmoid(x: Tensor) -> Tensor:
    z = np.exp(-np.abs(x.data))
    y = np.where(x.data >= 0, 1 / (1 + z), z / (1 + z)).astype(x.dtype)
    return make_result("sigmoid", y, (x,), lambda g: (g * y * (1 - y),))


def log(x: Tensor) -> Tensor:
    return make_result("log", np.log(x.data), (x,), lambda g: (g / x.data,))


def clip(x: Tensor, low: float, high: float) -> Tensor:
    inside = (x.data >= low) & (x.data <= high)
    return make_result("clip", np.clip(x.data, low, high), (x,), lambda g: (g * inside,))


def sum(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result("sum", np.sum(x.data, axis=axis, keepdims=keepdims), (x,), vjp)


def mean(x: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    count = x.data.size if axis is None else x.shape[axis]
    if count == 0:
        raise ContractViolation(f"mean over an empty axis of dims {x.dims}")
    return mul(sum(x, axis=axis, keepdims=keepdims), 1.0 / count)


def softmax(x: Tensor, axis: int = -1, mask: Optional[np.ndarray] = None) -> Tensor:
    """Max-subtracted softmax; positions where mask is False get weight 0."""
    if x.shape[axis] == 0:
        raise ShapeError("softmax over an empty axis")
    z = x.data
    if mask is not None:
        mask = np.broadcast_to(mask, x.shape)
        if not mask.any(axis=axis).all():
            raise ContractViolation("a query row has every position masked")
        z = np.where(mask, z, -np.inf)
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    y = e / e.sum(axis=axis, keepdims=True)
    return make_result("softmax", y, (x,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    if x.shape[axis] == 0:
        raise ShapeError("log_softmax over an empty axis")
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    y = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    return make_result(
        "log_softmax", y, (x,),
        lambda g: (g - np.exp(y) * g.sum(axis=axis, keepdims=True),),
    )


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ContractViolation("concat of nothing")
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    return make_result("concat", data, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)))


def getitem(x: Tensor, index) -> Tensor:
    def vjp(g):
        grad = np.zeros_like(x.data)
        np.add.at(grad, index, g)
        return (grad,)

    return make_result("getitem", x.data[index], (x,), vjp)


def embedding(table: Tensor, ids: Sequence[int]) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise ContractViolation(f"token id outside vocabulary of size {table.shape[0]}")

    def vjp(g):
        grad = np.zeros_like(table.data)
        np.add.at(grad, ids, g)
        return (grad,)

    return make_result("embedding", table.data[ids], (table,), vjp)


def dropout(x: Tensor, rate: float) -> Tensor:
    """Inverted dropout driven by the active graph's generator; identity otherwise."""
    graph = current_graph()
    if graph is None or not graph.training or rate == 0:
        return x
    keep = (graph.rng.random(x.shape) >= rate).astype(x.dtype) / x.dtype.type(1 - rate)
    return make_result("dropout", x.data * keep, (x,), lambda g: (g * keep,))


def conv1d(x: Tensor, kernels: Tensor, same_padding: bool = True) -> Tensor:
    """Temporal cross-correlation of x [T x Din] with kernels [W x Din x Dout], stride 1."""
    if x.data.ndim != 2 or kernels.data.ndim != 3:
        raise ShapeError(f"conv1d needs x [T x Din] and kernels [W x Din x Dout], got {x.dims} and {kernels.dims}")
    width, d_in, d_out = kernels.shape
    steps = x.shape[0]
    if steps == 0:
        raise ShapeError("conv1d over an empty sequence")
    if x.shape[1] != d_in:
        raise ShapeError(f"conv1d input width {x.shape[1]} does not match kernel width {d_in}")
    if same_padding and width % 2 == 0:
        raise ShapeError(f"same padding needs an odd kernel width, got {width}")

    pad = width // 2 if same_padding else 0
    out_steps = steps + 2 * pad - width + 1
    if out_steps < 1:
        raise ShapeError(f"sequence of {steps} frames is shorter than kernel width {width}")
    padded = np.pad(x.data, ((pad, pad), (0, 0)))
    columns = np.concatenate([padded[w:w + out_steps] for w in range(width)], axis=1)
    flat = kernels.data.reshape(width * d_in, d_out)

    def vjp(g):
        g_columns = g @ flat.T
        g_padded = np.zeros_like(padded)
        for w in range(width):
            g_padded[w:w + out_steps] += g_columns[:, w * d_in:(w + 1) * d_in]
        return g_padded[pad:pad + steps], (columns.T @ g).reshape(kernels.shape)

    return make_result("conv1d", columns @ flat, (x, kernels), vjp)
