"""
Reverse-mode differentiation over numpy arrays.

Operations executed while a Graph is active are appended to its tape when any
input needs a gradient. Graph.backward walks the tape in exact reverse order
and accumulates into the .grad buffers of leaf tensors. Outside a graph,
operations only compute values, which is what inference uses.
"""

import contextlib
import contextvars
from dataclasses import dataclass
from typing import Callable, Iterator, Optional, Sequence

import numpy as np

from app.errors import ContractViolation

_active_graph: contextvars.ContextVar[Optional["Graph"]] = contextvars.ContextVar(
    "active_graph", default=None
)


class Tensor:
    """Array value plus an optional gradient buffer of identical shape."""

    __slots__ = ("data", "requires_grad", "grad", "_produced")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if dtype is None:
            is_float_array = isinstance(data, np.ndarray) and data.dtype.kind == "f"
            dtype = data.dtype if is_float_array else np.float64
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = requires_grad
        self.grad = np.zeros_like(self.data) if requires_grad else None
        self._produced = False

    @property
    def dims(self) -> list[int]:
        return list(self.data.shape)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def is_leaf(self) -> bool:
        return not self._produced

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractViolation(f"item() needs a single value, tensor has dims {self.dims}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        if self.requires_grad:
            self.grad = np.zeros_like(self.data)

    def __repr__(self) -> str:
        return f"Tensor(dims={self.dims}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        from app.compute import functional
        return functional.add(self, other)

    def __radd__(self, other):
        from app.compute import functional
        return functional.add(other, self)

    def __sub__(self, other):
        from app.compute import functional
        return functional.sub(self, other)

    def __rsub__(self, other):
        from app.compute import functional
        return functional.sub(other, self)

    def __mul__(self, other):
        from app.compute import functional
        return functional.mul(self, other)

    def __rmul__(self, other):
        from app.compute import functional
        return functional.mul(other, self)

    def __neg__(self):
        from app.compute import functional
        return functional.mul(self, -1.0)

    def __matmul__(self, other):
        from app.compute import functional
        return functional.matmul(self, other)

    def __getitem__(self, index):
        from app.compute import functional
        return functional.getitem(self, index)


VectorJacobian = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]


@dataclass
class Node:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    vjp: VectorJacobian


class Graph:
    """
    Tape of recorded operations plus the seeded generator used by dropout.

    Use as a context manager; operations inside the block are recorded.
    """

    def __init__(self, seed: Optional[int] = None, training: bool = False):
        self.nodes: list[Node] = []
        self.training = training
        self.rng = np.random.default_rng(seed)
        self._tokens: list[contextvars.Token] = []

    def __enter__(self) -> "Graph":
        self._tokens.append(_active_graph.set(self))
        return self

    def __exit__(self, *exc_info) -> bool:
        _active_graph.reset(self._tokens.pop())
        return False

    @property
    def order(self) -> list[str]:
        return [node.op for node in self.nodes]

    def record(self, node: Node) -> None:
        self.nodes.append(node)

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into every leaf that requires a gradient."""
        if loss.data.size != 1:
            raise ContractViolation(f"backward needs a scalar loss, got dims {loss.dims}")
        if not loss.requires_grad:
            return
        seed = np.ones_like(loss.data)
        if loss.is_leaf:
            loss.grad += seed
            return

        adjoints: dict[int, np.ndarray] = {id(loss): seed}
        for node in reversed(self.nodes):
            upstream = adjoints.pop(id(node.output), None)
            if upstream is None:
                continue
            for inp, grad in zip(node.inputs, node.vjp(upstream)):
                if grad is None or not inp.requires_grad:
                    continue
                if inp.is_leaf:
                    inp.grad += grad.astype(inp.grad.dtype, copy=False)
                else:
                    previous = adjoints.get(id(inp))
                    adjoints[id(inp)] = grad if previous is None else previous + grad


def current_graph() -> Optional[Graph]:
    return _active_graph.get()


@contextlib.contextmanager
def inference() -> Iterator[None]:
    """Suspend recording (and dropout) for the enclosed block."""
    token = _active_graph.set(None)
    try:
        yield
    finally:
        _active_graph.reset(token)


def make_result(op: str, data: np.ndarray, inputs: Sequence[Tensor], vjp: VectorJacobian) -> Tensor:
    out = Tensor(data, dtype=data.dtype)
    graph = _active_graph.get()
    if graph is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._produced = True
        graph.record(Node(op, tuple(inputs), out, vjp))
    return out


def as_tensor(value, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(value, dtype=dtype) if dtype is not None else value, dtype=dtype)
