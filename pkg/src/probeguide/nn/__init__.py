"""Reverse-mode autodiff engine, neural kernels, optimizer, and checkpoints."""

from .engine import (
    Tensor,
    add,
    as_tensor,
    asin,
    atan2,
    concat,
    conv2d,
    cos,
    dense,
    div,
    embedding,
    exp,
    getitem,
    grad_check,
    layer_norm,
    mask_rows,
    matmul,
    mul,
    neg,
    pow_const,
    relu,
    reshape,
    sin,
    smooth_l1,
    smooth_l1_per_sample,
    softmax,
    softmax_attention,
    sqrt,
    sub,
    tmean,
    transpose,
    tsum,
)
from .opt import (
    AdamW,
    CheckpointError,
    ParamStore,
    cosine_lr,
    load_arrays,
    save_arrays,
)

__all__ = [
    "Tensor",
    "add",
    "as_tensor",
    "asin",
    "atan2",
    "concat",
    "conv2d",
    "cos",
    "dense",
    "div",
    "embedding",
    "exp",
    "getitem",
    "grad_check",
    "layer_norm",
    "mask_rows",
    "matmul",
    "mul",
    "neg",
    "pow_const",
    "relu",
    "reshape",
    "sin",
    "smooth_l1",
    "smooth_l1_per_sample",
    "softmax",
    "softmax_attention",
    "sqrt",
    "sub",
    "tmean",
    "transpose",
    "tsum",
    "AdamW",
    "CheckpointError",
    "ParamStore",
    "cosine_lr",
    "load_arrays",
    "save_arrays",
]
