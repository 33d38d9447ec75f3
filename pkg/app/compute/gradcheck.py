from typing import Callable, Union

import numpy as np

from app.compute.tensor import Graph, Tensor, inference
from app.errors import ContractViolation, NumericError


def grad_check(f: Callable[[Tensor], Tensor], x: Union[np.ndarray, Tensor], eps: float = 1e-6) -> float:
    """
    Compare the reverse-mode gradient of f at x with central differences.

    f must build a scalar from its argument deterministically (no dropout).
    Everything runs in float64. Returns the largest
    |analytic - numeric| / max(1, |analytic|) over all coordinates.
    """
    base = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    leaf = Tensor(base.copy(), requires_grad=True)
    with Graph() as graph:
        loss = f(leaf)
        if loss.data.size != 1:
            raise ContractViolation(f"grad_check needs a scalar function, got dims {loss.dims}")
        graph.backward(loss)
    analytic = leaf.grad

    numeric = np.zeros_like(base)
    with inference():
        for index in np.ndindex(base.shape):
            shifted = base.copy()
            shifted[index] += eps
            upper = f(Tensor(shifted)).item()
            shifted[index] -= 2 * eps
            lower = f(Tensor(shifted)).item()
            numeric[index] = (upper - lower) / (2 * eps)

    if not (np.isfinite(analytic).all() and np.isfinite(numeric).all()):
        raise NumericError("gradient check produced non-finite values")
    if base.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - numeric) / np.maximum(1.0, np.abs(analytic))))
