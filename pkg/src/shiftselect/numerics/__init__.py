from .container import ContainerError
from .gradcheck import GradCheckError, GradReport, grad_check
from .rng import keyed_normal, keyed_rng
from .tensor import (
    NumericGuardError,
    Tensor,
    add,
    as_tensor,
    clip,
    concatenate,
    cosine_similarity,
    div,
    exp,
    gelu,
    getitem,
    is_grad_enabled,
    l2_normalize,
    layer_norm,
    log,
    log_softmax,
    make_op,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    reshape,
    softmax,
    sub,
    swapaxes,
    transpose,
    tsum,
)

__all__ = [
    "ContainerError",
    "GradCheckError",
    "GradReport",
    "NumericGuardError",
    "Tensor",
    "add",
    "as_tensor",
    "clip",
    "concatenate",
    "cosine_similarity",
    "div",
    "exp",
    "gelu",
    "getitem",
    "grad_check",
    "is_grad_enabled",
    "keyed_normal",
    "keyed_rng",
    "l2_normalize",
    "layer_norm",
    "log",
    "log_softmax",
    "make_op",
    "matmul",
    "mean",
    "mul",
    "neg",
    "no_grad",
    "reshape",
    "softmax",
    "sub",
    "swapaxes",
    "transpose",
    "tsum",
]
