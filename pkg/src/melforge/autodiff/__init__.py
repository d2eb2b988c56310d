"""Minimal tensor library with taped reverse-mode differentiation.

The backward pass can itself be recorded (``backward_differentiable`` /
``grad(..., create_graph=True)``), giving exact second-order gradients for
every primitive the models use.
"""

from . import ops  # registers primitives and operator sugar  # noqa: F401
from .adam import AdamState, adam_step
from .nn import (
    conv1d,
    conv1d_transposed,
    highway_block,
    kaiming_uniform,
    layer_norm,
    ones_param,
    zeros_param,
)
from .ops import (
    absval,
    add,
    broadcast_to,
    clip,
    concat,
    conv_valid,
    conv_weight_grad,
    div,
    embedding,
    exp,
    expand_slice,
    interleave_zeros,
    kernel_adjoint,
    log,
    matmul,
    mean,
    mul,
    narrow,
    neg,
    pad_time,
    relu,
    reshape,
    scatter_rows,
    sigmoid,
    softmax,
    sqrt,
    sub,
    sum_to,
    swapaxes,
    take_every,
    tanh,
    tsum,
)
from .tensor import (
    Tensor,
    as_tensor,
    backward,
    grad,
    no_grad,
    set_grad_enabled,
    using_dtype,
)


def backward_differentiable(loss: Tensor, wrt) -> list[Tensor]:
    """Backward pass recorded on the tape: the returned gradient tensors are
    differentiable, so a second backward yields second-order gradients."""
    return grad(loss, wrt, create_graph=True)


__all__ = [
    "AdamState",
    "adam_step",
    "Tensor",
    "as_tensor",
    "backward",
    "backward_differentiable",
    "grad",
    "no_grad",
    "set_grad_enabled",
    "using_dtype",
    "conv1d",
    "conv1d_transposed",
    "highway_block",
    "layer_norm",
    "kaiming_uniform",
    "zeros_param",
    "ones_param",
    "absval",
    "add",
    "broadcast_to",
    "clip",
    "concat",
    "conv_valid",
    "conv_weight_grad",
    "div",
    "embedding",
    "exp",
    "expand_slice",
    "interleave_zeros",
    "kernel_adjoint",
    "log",
    "matmul",
    "mean",
    "mul",
    "narrow",
    "neg",
    "pad_time",
    "relu",
    "reshape",
    "scatter_rows",
    "sigmoid",
    "softmax",
    "sqrt",
    "sub",
    "sum_to",
    "swapaxes",
    "take_every",
    "tanh",
    "tsum",
]
