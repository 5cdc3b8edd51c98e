"""PointNet classifier with a 3x3 input transform and a 256-wide global max pool."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..core import tensor as T
from ..core.layers import LayerParams, dense, dropout, global_max_pool, linear, shared_mlp
from ..core.tensor import Tensor
from ..errors import ConfigError
from .base import ForwardResult, PointCloudModel


@dataclass
class PointNetConfig:
    in_features: int = 4
    tnet_mlp: tuple[int, ...] = (32, 64, 128)
    tnet_fc: tuple[int, ...] = (64, 32)
    mlp: tuple[int, ...] = (64, 64, 128, 256)
    head: tuple[int, ...] = (128, 64)
    num_classes: int = 2
    batch_norm: bool = True
    dropout: float = 0.3
    regularizer_weight: float = 1e-3
    min_points: int = 64

    def __post_init__(self):
        self.tnet_mlp = tuple(self.tnet_mlp)
        self.tnet_fc = tuple(self.tnet_fc)
        self.mlp = tuple(self.mlp)
        self.head = tuple(self.head)
        if self.in_features != 4:
            raise ConfigError("PointNet consumes exactly 4 features (x, y, z, thickness)")
        if self.num_classes != 2:
            raise ConfigError("binary classifier: num_classes must be 2")
        if not self.mlp or not self.tnet_mlp:
            raise ConfigError("shared MLPs need at least one layer")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    @property
    def pool_dim(self) -> int:
        return self.mlp[-1]


@dataclass
class TNetParams:
    mlp: list[LayerParams]
    fc: list[LayerParams]
    out: LayerParams  # -> 9, zero-initialised so the transform starts at I

    def layers(self) -> list[LayerParams]:
        return [*self.mlp, *self.fc, self.out]


def _stack(widths, cin, rng, batch_norm) -> list[LayerParams]:
    layers = []
    for w in widths:
        layers.append(LayerParams.create(cin, w, rng, batch_norm=batch_norm))
        cin = w
    return layers


def tnet_apply(points, tnet: TNetParams, training: bool = False) -> tuple[Tensor, Tensor]:
    """Predict a 3x3 matrix from the cloud and right-multiply the x, y, z columns by it.

    ``points`` is (N, 4) or (B, N, 4); the thickness column passes through.
    Returns the transformed points and the (B, 3, 3) matrix.
    """
    x = T.as_tensor(points)
    squeeze = x.ndim == 2
    if squeeze:
        x = T.reshape(x, (1,) + x.shape)
    B = x.shape[0]
    h = shared_mlp(x, tnet.mlp, training)
    g, _ = global_max_pool(h)
    for lp in tnet.fc:
        g = dense(g, lp, training)
    a = T.add(T.reshape(linear(g, tnet.out), (B, 3, 3)), np.eye(3))
    spatial = T.matmul(x[..., :3], a)
    out = T.concat([spatial, x[..., 3:]], axis=-1)
    if squeeze:
        out = T.reshape(out, out.shape[1:])
    return out, a


def transform_regularizer(a) -> Tensor:
    """Sum over the batch of ||I - A A^T||_F^2."""
    a = T.as_tensor(a)
    diff = T.sub(np.eye(3), T.matmul(a, T.transpose(a)))
    return T.sum_(T.square(diff))


class PointNet(PointCloudModel):
    family = "pointnet"

    def __init__(self, config: PointNetConfig | None = None, seed: int = 0):
        config = config or PointNetConfig()
        super().__init__(config)
        rng = np.random.default_rng(seed)
        bn = config.batch_norm
        tnet_mlp = _stack(config.tnet_mlp, config.in_features, rng, bn)
        tnet_fc = _stack(config.tnet_fc, config.tnet_mlp[-1], rng, False)
        tnet_out = LayerParams.create(config.tnet_fc[-1] if config.tnet_fc else config.tnet_mlp[-1], 9, rng,
                                      zero=True)
        self.tnet = TNetParams(tnet_mlp, tnet_fc, tnet_out)
        self.mlp = _stack(config.mlp, config.in_features, rng, bn)
        self.head = _stack(config.head, config.pool_dim, rng, False)
        self.classifier = LayerParams.create(config.head[-1] if config.head else config.pool_dim,
                                             config.num_classes, rng)

    def min_points(self) -> int:
        return self.config.min_points

    def layers(self) -> list[LayerParams]:
        return [*self.tnet.layers(), *self.mlp, *self.head, self.classifier]

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None) -> ForwardResult:
        x = self._batched(x)
        h, a = tnet_apply(x, self.tnet, training)
        h = shared_mlp(h, self.mlp, training)
        g, argmax = global_max_pool(h)
        for lp in self.head:
            g = dense(g, lp, training)
        g = dropout(g, self.config.dropout, rng, training)
        logits = linear(g, self.classifier)
        return ForwardResult(logits, argmax, a)

    def extra_loss(self, result: ForwardResult) -> Tensor | None:
        w = self.config.regularizer_weight
        if w <= 0 or result.transform is None:
            return None
        return T.mul(transform_regularizer(result.transform), w / result.transform.shape[0])
