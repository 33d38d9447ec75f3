"""
Adam with warmup/inverse-square-root learning rate and global-norm clipping.
"""

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from app.config import TrainConfig
from app.errors import TrainingError
from app.model.params import ModelParams


def learning_rate(step: int, peak: float, warmup: int) -> float:
    """peak * min(step / warmup, sqrt(warmup / step)) for step >= 1."""
    step = max(step, 1)
    return peak * min(step / warmup, math.sqrt(warmup / step))


def clip_by_global_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    total = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads.values()))
    if total <= max_norm or total == 0.0:
        return grads, total
    scale = max_norm / total
    return {name: g * g.dtype.type(scale) for name, g in grads.items()}, total


@dataclass
class AdamState:
    step: int = 0
    first: dict[str, np.ndarray] = field(default_factory=dict)
    second: dict[str, np.ndarray] = field(default_factory=dict)


def optimizer_step(
    params: ModelParams,
    state: AdamState,
    config: TrainConfig,
    names: Optional[Sequence[str]] = None,
) -> float:
    """Apply one bias-corrected Adam update to `names` (all parameters by default); returns the learning rate."""
    names = list(names) if names is not None else params.names()
    grads = {name: params[name].grad for name in names}
    for name, grad in grads.items():
        if grad is None:
            raise TrainingError(f"parameter {name} has no gradient buffer")
        if not np.isfinite(grad).all():
            raise TrainingError(f"non-finite gradient in {name} at step {state.step + 1}")
    grads, _ = clip_by_global_norm(grads, config.grad_clip)

    state.step += 1
    lr = learning_rate(state.step, config.learning_rate, config.warmup_steps)
    b1, b2, eps = config.adam_beta1, config.adam_beta2, config.adam_eps
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step

    for name, grad in grads.items():
        tensor = params[name]
        first = state.first.setdefault(name, np.zeros_like(tensor.data))
        second = state.second.setdefault(name, np.zeros_like(tensor.data))
        first *= b1
        first += (1.0 - b1) * grad
        second *= b2
        second += (1.0 - b2) * np.square(grad)
        update = lr * (first / correction1) / (np.sqrt(second / correction2) + eps)
        tensor.data = (tensor.data - update).astype(tensor.dtype, copy=False)
    return lr
