from .tensor import NonFiniteError, Tensor, as_tensor, backward
from .ops import (
    add,
    bf_norm,
    concat,
    conv2d,
    downsample2x,
    mse_loss,
    mul,
    pixel_select,
    relu,
    scale,
    sub,
    tsum,
    upsample2x,
)
from .adam import AdamState, adam_step

__all__ = [
    "NonFiniteError", "Tensor", "as_tensor", "backward",
    "add", "bf_norm", "concat", "conv2d", "downsample2x", "mse_loss", "mul",
    "pixel_select", "relu", "scale", "sub", "tsum", "upsample2x",
    "AdamState", "adam_step",
]
