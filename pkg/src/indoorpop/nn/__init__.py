"""From-scratch reverse-mode autodiff with the layers the estimators need."""

from .layers import (
    GRU_PARAM_KEYS,
    gcn_layer,
    gcn_propagation,
    gru_cell,
    gru_params,
    self_attention,
)
from .optim import AdamState, adam_step, init_uniform
from .tensor import (
    NonFiniteError,
    Tape,
    Tensor,
    add,
    backward,
    build_tape,
    concat,
    hadamard,
    matmul,
    regroup_rows,
    relu,
    reshape,
    row_softmax,
    scale,
    sigmoid,
    slice_rows,
    square,
    sub,
    tanh,
    tensor_sum,
    transpose,
    zero_grad,
)

__all__ = [
    "AdamState",
    "GRU_PARAM_KEYS",
    "NonFiniteError",
    "Tape",
    "Tensor",
    "adam_step",
    "add",
    "backward",
    "build_tape",
    "concat",
    "gcn_layer",
    "gcn_propagation",
    "gru_cell",
    "gru_params",
    "hadamard",
    "init_uniform",
    "matmul",
    "regroup_rows",
    "relu",
    "reshape",
    "row_softmax",
    "scale",
    "self_attention",
    "sigmoid",
    "slice_rows",
    "square",
    "sub",
    "tanh",
    "tensor_sum",
    "transpose",
    "zero_grad",
]
