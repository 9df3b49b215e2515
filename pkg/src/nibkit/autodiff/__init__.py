from .ops import (
    absolute,
    add,
    affine,
    concat,
    conv2d,
    dct2,
    gaussian_blur,
    idct2,
    l1_loss,
    leaky_relu,
    mean,
    minimum,
    mse_loss,
    mul,
    relu,
    sigmoid,
    sub,
    take,
    tanh,
    upsample2x,
)
from .ops import sum as sum_
from .optim import OptimizerState, adam, optimizer_step, sgd, zero_grad
from .tensor import Function, Tensor, backward, no_grad

__all__ = [
    "Function", "Tensor", "backward", "no_grad",
    "absolute", "add", "affine", "concat", "conv2d", "dct2", "gaussian_blur", "idct2",
    "l1_loss", "leaky_relu", "mean", "minimum", "mse_loss", "mul", "relu", "sigmoid",
    "sub", "sum_", "take", "tanh", "upsample2x",
    "OptimizerState", "adam", "optimizer_step", "sgd", "zero_grad",
]
