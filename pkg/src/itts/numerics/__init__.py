"""Dense-tensor arithmetic with reverse-mode gradients and Adam."""

from .checkpoint import CheckpointError, read_container, write_container
from .params import ADAM_PREFIX, ParamStore
from .tensor import NonFiniteError, ShapeError, Tensor, as_tensor, autograd, grad_enabled
from .ops import (
    add,
    affine,
    add_rowwise,
    bce_with_logits,
    concat,
    conv1d_seq,
    conv2d,
    cosine,
    cross_entropy_logits,
    gru_sequence,
    gru_step,
    linear,
    matmul,
    mean,
    mean_pool,
    mse,
    mul,
    permute,
    reshape,
    sigmoid,
    slice_cols,
    softmax,
    sub,
    take_rows,
    tanh,
    tensor_sum,
    tile_rows,
    transpose,
)

__all__ = [
    "ADAM_PREFIX",
    "CheckpointError",
    "NonFiniteError",
    "ParamStore",
    "ShapeError",
    "Tensor",
    "add",
    "affine",
    "add_rowwise",
    "as_tensor",
    "autograd",
    "bce_with_logits",
    "concat",
    "conv1d_seq",
    "conv2d",
    "cosine",
    "cross_entropy_logits",
    "grad_enabled",
    "gru_sequence",
    "gru_step",
    "linear",
    "matmul",
    "mean",
    "mean_pool",
    "mse",
    "mul",
    "permute",
    "read_container",
    "reshape",
    "sigmoid",
    "slice_cols",
    "softmax",
    "sub",
    "take_rows",
    "tanh",
    "tensor_sum",
    "tile_rows",
    "transpose",
    "write_container",
]
