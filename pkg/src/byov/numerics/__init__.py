from .tensor import (
    Tensor,
    add,
    add_const,
    backward,
    concat_cols,
    concat_rows,
    constant,
    gather_rows,
    gelu,
    layer_norm,
    linear,
    masked_attention,
    masked_softmax,
    matmul,
    mse_loss,
    mul,
    no_grad,
    row_scatter,
    scale,
    slice_cols,
    slice_rows,
    sub,
    transpose,
    tsum,
)
from .adam import AdamState, adam_step
from .gradcheck import finite_diff_check

__all__ = [
    "Tensor", "add", "add_const", "backward", "concat_cols", "concat_rows", "constant",
    "gather_rows", "gelu", "layer_norm", "linear", "masked_attention",
    "masked_softmax", "matmul", "mse_loss", "mul", "no_grad", "row_scatter",
    "scale", "slice_cols", "slice_rows", "sub", "transpose", "tsum",
    "AdamState", "adam_step", "finite_diff_check",
]
