"""Dense linear algebra, a small autodiff tape, optimizers and checkpoints."""

from .checkpoint import load_checkpoint, save_checkpoint
from .params import (
    ParamSet,
    forward_backward,
    matmul_arrays,
    optimizer_step,
    xavier_uniform,
)
from .tensor import (
    Tensor,
    add,
    affine,
    concat_cols,
    concat_rows,
    constant,
    dropout,
    frobenius_diff,
    gather_rows,
    log,
    matmul,
    mul,
    neg,
    relu,
    row_l2_normalize,
    rowwise_dot,
    scale,
    segment_mean,
    sigmoid,
    sub,
    sum_all,
)

__all__ = [
    "Tensor",
    "ParamSet",
    "forward_backward",
    "optimizer_step",
    "matmul_arrays",
    "xavier_uniform",
    "save_checkpoint",
    "load_checkpoint",
    "add",
    "affine",
    "concat_cols",
    "concat_rows",
    "constant",
    "dropout",
    "frobenius_diff",
    "gather_rows",
    "log",
    "matmul",
    "mul",
    "neg",
    "relu",
    "row_l2_normalize",
    "rowwise_dot",
    "scale",
    "segment_mean",
    "sigmoid",
    "sub",
    "sum_all",
]
