"""Reverse-mode differentiation over fixed-shape dense tensors."""

from .backend import HAVE_COMPILED, default_backend
from .gradcheck import finite_difference_check, finite_difference_gradient
from .graph import (
    ContractError,
    Tape,
    Tensor,
    TraceError,
    abs_,
    add,
    atan,
    bmm33,
    clamp,
    concat,
    concat_many,
    cos,
    cross3,
    div,
    l2norm,
    matmul,
    maximum,
    mean,
    minimum,
    mul,
    neg,
    relu,
    reshape,
    sin,
    slice_cols,
    sqrt,
    sub,
    sum_,
    transpose,
    where_mask,
)

__all__ = [
    "Tape", "Tensor", "TraceError", "ContractError",
    "add", "sub", "mul", "div", "neg", "matmul", "transpose", "sum_", "mean",
    "relu", "sin", "cos", "sqrt", "abs_", "atan", "minimum", "maximum",
    "clamp", "where_mask", "concat", "concat_many", "slice_cols", "l2norm",
    "cross3", "bmm33", "reshape",
    "finite_difference_check", "finite_difference_gradient",
    "HAVE_COMPILED", "default_backend",
]
