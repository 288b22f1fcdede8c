"""Dense-tensor engine with reverse-mode automatic differentiation."""

from . import functional, kernels
from .functional import (
    avg_pool2d,
    batch_norm2d,
    bce_loss,
    conv2d,
    conv_transpose2d,
    fully_connected,
    leaky_relu,
    mse_loss,
    relu,
    sigmoid,
    tanh_act,
)
from .gradcheck import check_directional, check_gradients, numerical_gradient, relative_error
from .nn import BatchNorm2d, Conv2d, ConvTranspose2d, Linear, Module, frozen
from .optim import Adam, AdamState, adam_step
from .tensor import DomainError, Node, ShapeError, Tensor, no_grad

__all__ = [
    "Adam",
    "AdamState",
    "BatchNorm2d",
    "Conv2d",
    "ConvTranspose2d",
    "DomainError",
    "Linear",
    "Module",
    "Node",
    "ShapeError",
    "Tensor",
    "adam_step",
    "avg_pool2d",
    "batch_norm2d",
    "bce_loss",
    "check_directional",
    "check_gradients",
    "conv2d",
    "conv_transpose2d",
    "frozen",
    "fully_connected",
    "functional",
    "kernels",
    "leaky_relu",
    "mse_loss",
    "no_grad",
    "numerical_gradient",
    "relative_error",
    "relu",
    "sigmoid",
    "tanh_act",
]
