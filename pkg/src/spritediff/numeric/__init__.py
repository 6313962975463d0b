"""Deterministic float64 differentiable array kernel."""

from .nn import Conv2d, Embedding, GroupNorm, LayerNorm, Linear, Module, num_groups, param
from .ops import (
    avg_pool2d,
    conv2d,
    cross_entropy,
    embedding,
    group_norm,
    layer_norm,
    linear,
    mse_loss,
    upsample_nearest,
)
from .optim import Adam, ParamGroup
from .rng import Rng
from .tensor import (
    ContractError,
    InvalidValueError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    broadcast_to,
    concat,
    div,
    exp,
    is_grad_enabled,
    log,
    log_softmax_last_dim,
    matmul,
    mean,
    mul,
    no_grad,
    reshape,
    silu,
    slice_,
    softmax_last_dim,
    sqrt,
    square,
    sub,
    sum_,
    tanh,
    transpose,
)


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every trainable leaf reachable from scalar ``loss``."""
    loss.backward()


__all__ = [
    "Adam",
    "ContractError",
    "Conv2d",
    "Embedding",
    "GroupNorm",
    "InvalidValueError",
    "LayerNorm",
    "Linear",
    "Module",
    "ParamGroup",
    "Rng",
    "ShapeError",
    "Tensor",
    "add",
    "as_tensor",
    "avg_pool2d",
    "backward",
    "broadcast_to",
    "concat",
    "conv2d",
    "cross_entropy",
    "div",
    "embedding",
    "exp",
    "group_norm",
    "is_grad_enabled",
    "layer_norm",
    "linear",
    "log",
    "log_softmax_last_dim",
    "matmul",
    "mean",
    "mse_loss",
    "mul",
    "no_grad",
    "num_groups",
    "param",
    "reshape",
    "silu",
    "slice_",
    "softmax_last_dim",
    "sqrt",
    "square",
    "sub",
    "sum_",
    "tanh",
    "transpose",
    "upsample_nearest",
]
