from .tensor import Graph, Tensor, as_tensor, current_graph, inference
from .functional import (
    add,
    clip,
    concat,
    conv1d,
    dropout,
    embedding,
    getitem,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    sigmoid,
    softmax,
    sub,
    sum,
    transpose,
)
from .layers import (
    AttentionWeights,
    FFNWeights,
    ffn_block,
    layer_norm,
    linear,
    mean_pool,
    mha,
    positional_encoding,
)
from .gradcheck import grad_check

__all__ = [
    # Autodiff core
    "Graph",
    "Tensor",
    "as_tensor",
    "current_graph",
    "inference",
    # Primitives
    "add",
    "clip",
    "concat",
    "conv1d",
    "dropout",
    "embedding",
    "getitem",
    "log",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "relu",
    "reshape",
    "sigmoid",
    "softmax",
    "sub",
    "sum",
    "transpose",
    # Layers
    "AttentionWeights",
    "FFNWeights",
    "ffn_block",
    "layer_norm",
    "linear",
    "mean_pool",
    "mha",
    "positional_encoding",
    "grad_check",
]
