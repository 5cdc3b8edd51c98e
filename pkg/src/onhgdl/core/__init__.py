"""Dense float64 tensors with reverse-mode gradients and the layers built on them."""
from .layers import (BatchNormParams, LayerParams, dense, dropout, global_max_pool, linear,
                     shared_mlp, softmax_cross_entropy)
from .optim import AdamState, adam_step
from .tensor import Tensor, backward, matmul, parameter

__all__ = [
    "AdamState", "BatchNormParams", "LayerParams", "Tensor", "adam_step", "backward", "dense",
    "dropout", "global_max_pool", "linear", "matmul", "parameter", "shared_mlp",
    "softmax_cross_entropy",
]
