"""
Layer primitives composed from the functional ops: linear maps, layer
normalisation, position-wise feed-forward blocks, pooling and multi-head
attention.
"""

import math
from typing import NamedTuple, Optional

import numpy as np

from app.compute import functional as F
from app.compute.tensor import Tensor, as_tensor, make_result
from app.errors import ConfigError, ContractViolation, ShapeError


class AttentionWeights(NamedTuple):
    wq: Tensor
    bq: Tensor
    wk: Tensor
    bk: Tensor
    wv: Tensor
    bv: Tensor
    wo: Tensor
    bo: Tensor


class FFNWeights(NamedTuple):
    w1: Tensor
    b1: Tensor
    w2: Tensor
    b2: Tensor


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear: input width {x.shape[-1]} does not match weight rows {weight.shape[0]}")
    y = F.matmul(x, weight)
    if bias is None:
        return y
    if bias.shape != (weight.shape[1],):
        raise ShapeError(f"linear: bias dims {bias.dims} do not match output width {weight.shape[1]}")
    return F.add(y, bias)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise the last axis to zero mean and unit population variance, then scale and shift."""
    width = x.shape[-1]
    if width == 0:
        raise ShapeError("layer_norm over an empty feature axis")
    if eps <= 0:
        raise ConfigError(f"layer_norm eps must be positive, got {eps}")
    if gain.shape != (width,) or bias.shape != (width,):
        raise ShapeError(f"layer_norm: gain/bias dims {gain.dims}/{bias.dims} do not match width {width}")

    centred = x.data - x.data.mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt((centred ** 2).mean(axis=-1, keepdims=True) + eps)
    normed = centred * inv_std
    leading = tuple(range(x.data.ndim - 1))

    def vjp(g):
        g_normed = g * gain.data
        g_x = inv_std * (
            g_normed
            - g_normed.mean(axis=-1, keepdims=True)
            - normed * (g_normed * normed).mean(axis=-1, keepdims=True)
        )
        return g_x, (g * normed).sum(axis=leading), g.sum(axis=leading)

    y = (normed * gain.data + bias.data).astype(x.dtype, copy=False)
    return make_result("layer_norm", y, (x, gain, bias), vjp)


def ffn_block(x: Tensor, weights: FFNWeights) -> Tensor:
    if weights.w1.shape[1] < 1:
        raise ShapeError("feed-forward hidden width must be at least 1")
    if weights.w2.shape[1] != x.shape[-1]:
        raise ShapeError(f"feed-forward output width {weights.w2.shape[1]} does not match input width {x.shape[-1]}")
    return linear(F.relu(linear(x, weights.w1, weights.b1)), weights.w2, weights.b2)


def mean_pool(x: Tensor, mask: Optional[np.ndarray] = None) -> Tensor:
    """Mean over the time axis of x [T x D], counting only frames where mask is True."""
    steps = x.shape[0]
    if steps == 0:
        raise ContractViolation("mean_pool over an empty sequence")
    if mask is None:
        return F.mean(x, axis=0)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (steps,):
        raise ShapeError(f"mean_pool mask dims {list(mask.shape)} do not match {steps} frames")
    count = int(mask.sum())
    if count == 0:
        raise ContractViolation("mean_pool with every frame masked")
    weights = as_tensor((mask / count)[:, None], like=x)
    return F.sum(F.mul(x, weights), axis=0)


def positional_encoding(length: int, width: int, dtype=np.float32) -> np.ndarray:
    positions = np.arange(length, dtype=np.float64)[:, None]
    rates = np.exp(-math.log(10000.0) * (np.arange(0, width, 2, dtype=np.float64) / width))
    table = np.zeros((length, width), dtype=np.float64)
    table[:, 0::2] = np.sin(positions * rates)
    table[:, 1::2] = np.cos(positions * rates[: width // 2])
    return table.astype(dtype)


def _split_heads(x: Tensor, heads: int, key_major: bool = False) -> Tensor:
    steps, width = x.shape
    split = F.reshape(x, (steps, heads, width // heads))
    return F.transpose(split, (1, 2, 0) if key_major else (1, 0, 2))


def mha(
    query: Tensor,
    key: Tensor,
    value: Tensor,
    weights: AttentionWeights,
    heads: int,
    mask: Optional[np.ndarray] = None,
    return_weights: bool = False,
):
    """
    Multi-head scaled dot-product attention.

    query is [T_q x D_q]; key and value are [T_k x D_kv]. The projections map
    both sides into the query width, split it into `heads` slices scaled by
    1/sqrt(width/heads), and project the concatenated heads back. mask is a
    boolean [T_q x T_k] array where True marks an attendable position.
    """
    width = weights.wq.shape[1]
    if heads < 1 or width % heads != 0:
        raise ConfigError(f"attention width {width} is not divisible by {heads} heads")
    if key.shape[0] != value.shape[0]:
        raise ShapeError(f"key has {key.shape[0]} positions but value has {value.shape[0]}")
    q_steps, k_steps = query.shape[0], key.shape[0]
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != (q_steps, k_steps):
            raise ShapeError(f"attention mask dims {list(mask.shape)} do not match [{q_steps}, {k_steps}]")
        mask = mask[None]

    q = _split_heads(linear(query, weights.wq, weights.bq), heads)
    k = _split_heads(linear(key, weights.wk, weights.bk), heads, key_major=True)
    v = _split_heads(linear(value, weights.wv, weights.bv), heads)

    scores = F.mul(F.matmul(q, k), 1.0 / math.sqrt(width // heads))
    attention = F.softmax(scores, axis=-1, mask=mask)
    context = F.reshape(F.transpose(F.matmul(attention, v), (1, 0, 2)), (q_steps, width))
    out = linear(context, weights.wo, weights.bo)
    if return_weights:
        return out, attention
    return out
