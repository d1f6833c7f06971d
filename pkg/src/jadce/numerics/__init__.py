"""Minimal dense-tensor core with reverse-mode differentiation."""
from .params import AdamState, ParamBundle, adam_step, as_tensors, grad, sgd_step
from .tensor import (
    ContractError,
    DimensionError,
    SingularMatrixError,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    conv1d,
    conv_out_len,
    convtranspose1d,
    div,
    frobenius,
    group_shrink,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    scale,
    spd_solve,
    sqrt,
    square,
    sub,
    sum,
    take,
    transpose,
    value,
)

__all__ = [
    "AdamState", "ContractError", "DimensionError", "ParamBundle", "SingularMatrixError",
    "Tensor", "adam_step", "add", "as_tensor", "as_tensors", "backward", "concat",
    "conv1d", "conv_out_len", "convtranspose1d", "div", "frobenius", "grad",
    "group_shrink", "matmul", "mean", "mul", "relu", "reshape", "scale", "sgd_step",
    "spd_solve", "sqrt", "square", "sub", "sum", "take", "transpose", "value",
]
