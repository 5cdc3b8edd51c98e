"""Dense layers shared by PointNet and DGCNN."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, DimensionError
from . import tensor as T
from .tensor import Tensor


@dataclass
class BatchNormParams:
    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.9
    eps: float = 1e-5

    @classmethod
    def create(cls, width: int, momentum: float = 0.9, eps: float = 1e-5) -> "BatchNormParams":
        return cls(T.parameter(np.ones(width)), T.parameter(np.zeros(width)),
                   np.zeros(width), np.ones(width), momentum, eps)


@dataclass
class LayerParams:
    """Weights (in x out), bias (out) and optional batch-norm state of one layer."""

    weight: Tensor
    bias: Tensor
    bn: BatchNormParams | None = None

    def __post_init__(self):
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise DimensionError(f"weight {self.weight.shape} and bias {self.bias.shape} disagree")
        if self.bn is not None:
            if np.any(self.bn.running_var <= 0):
                raise ContractError("running variance must be positive")

    @property
    def in_features(self) -> int:
        return self.weight.shape[0]

    @property
    def out_features(self) -> int:
        return self.weight.shape[1]

    @classmethod
    def create(cls, cin: int, cout: int, rng: np.random.Generator, batch_norm: bool = False,
               zero: bool = False) -> "LayerParams":
        if zero:
            w = np.zeros((cin, cout))
        else:
            bound = np.sqrt(6.0 / cin)  # He-uniform
            w = rng.uniform(-bound, bound, size=(cin, cout))
        bn = BatchNormParams.create(cout) if batch_norm else None
        return cls(T.parameter(w), T.parameter(np.zeros(cout)), bn)

    def parameters(self) -> list[Tensor]:
        ps = [self.weight, self.bias]
        if self.bn is not None:
            ps += [self.bn.gamma, self.bn.beta]
        return ps

    def buffers(self) -> list[np.ndarray]:
        return [] if self.bn is None else [self.bn.running_mean, self.bn.running_var]


def linear(x, lp: LayerParams) -> Tensor:
    x = T.as_tensor(x)
    if x.shape[-1] != lp.in_features:
        raise DimensionError(f"layer expects {lp.in_features} input features, got {x.shape[-1]}")
    return T.add(T.matmul(x, lp.weight), lp.bias)


def apply_batch_norm(x: Tensor, bn: BatchNormParams, training: bool) -> Tensor:
    out, mu, var = T.batch_norm(x, bn.gamma, bn.beta, bn.eps, training, bn.running_mean, bn.running_var)
    if training:
        bn.running_mean = bn.momentum * bn.running_mean + (1.0 - bn.momentum) * mu
        bn.running_var = bn.momentum * bn.running_var + (1.0 - bn.momentum) * var
    return out


def dense(x, lp: LayerParams, training: bool = False, activation: bool = True) -> Tensor:
    """linear -> batch-norm (if the layer has one) -> ReLU."""
    h = linear(x, lp)
    if lp.bn is not None:
        h = apply_batch_norm(h, lp.bn, training)
    return T.relu(h) if activation else h


def shared_mlp(points, params: list[LayerParams], training: bool = False) -> Tensor:
    """Apply the same stack of dense layers to every row (point) of ``points``.

    Works on (N, C) or batched (B, N, C) inputs; batch-norm statistics in
    training mode are taken over all points of the batch.
    """
    h = T.as_tensor(points)
    for lp in params:
        h = dense(h, lp, training)
    return h


def global_max_pool(features) -> tuple[Tensor, np.ndarray]:
    """Column-wise max over points.

    (N, C) -> values (C,), argmax (C,); (B, N, C) -> (B, C), (B, C).
    """
    features = T.as_tensor(features)
    if features.ndim < 2 or features.shape[-2] < 1:
        raise ContractError("global_max_pool needs at least one point")
    return T.max_reduce(features, axis=-2)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    if not training or rate <= 0.0 or rng is None:
        return x
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return T.mul(x, mask)


softmax_cross_entropy = T.softmax_cross_entropy

