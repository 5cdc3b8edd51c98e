"""Pieces shared by the two point-cloud classifiers."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from ..core import checkpoint
from ..core.layers import LayerParams
from ..core.tensor import Tensor
from ..errors import InputError

# Fixed input scaling: network inputs O(1) without per-cloud statistics.
XYZ_SCALE_UM = 1750.0
THICKNESS_SCALE_UM = 500.0


def normalize_features(points: np.ndarray) -> np.ndarray:
    """(N, 4) rows of x, y, z, thickness in um -> network input units."""
    out = np.array(points, dtype=np.float64)
    out[..., :3] /= XYZ_SCALE_UM
    out[..., 3] /= THICKNESS_SCALE_UM
    return out


@dataclass
class ForwardResult:
    logits: Tensor           # (B, 2)
    pool_argmax: np.ndarray  # (B, pool_dim) row index per pooled channel
    transform: Tensor | None = None  # (B, 3, 3) PointNet input transform


class PointCloudModel:
    family = ""

    def __init__(self, config):
        self.config = config

    def layers(self) -> list[LayerParams]:
        raise NotImplementedError

    def parameters(self) -> list[Tensor]:
        return checkpoint.parameters_of(self.layers())

    def forward(self, x, training: bool = False, rng: np.random.Generator | None = None) -> ForwardResult:
        raise NotImplementedError

    def min_points(self) -> int:
        raise NotImplementedError

    def _batched(self, x) -> np.ndarray:
        x = np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
        if x.ndim == 2:
            x = x[None]
        if x.ndim != 3 or x.shape[-1] != self.config.in_features:
            raise InputError(f"expected (B, N, {self.config.in_features}) input, got {x.shape}")
        if x.shape[1] < self.min_points():
            raise InputError(f"{self.family} needs at least {self.min_points()} points, got {x.shape[1]}")
        return x

    def arch_config(self) -> dict:
        return {
            "family": self.family,
            "config": asdict(self.config),
            "normalization": {"xyz_scale_um": XYZ_SCALE_UM, "thickness_scale_um": THICKNESS_SCALE_UM},
        }

    def save(self, path) -> str:
        return checkpoint.save(path, self.arch_config(), self.layers())

    def to_bytes(self) -> bytes:
        return checkpoint.encode(self.arch_config(), checkpoint.layer_arrays(self.layers()))

    def state(self) -> list[np.ndarray]:
        return [np.array(a) for a in checkpoint.layer_arrays(self.layers())]

    def load_state(self, arrays: list[np.ndarray]) -> None:
        checkpoint.assign_layer_arrays(self.layers(), arrays)

    def predict_proba(self, x) -> np.ndarray:
        """Glaucoma probability per cloud, eval mode."""
        logits = self.forward(x, training=False).logits.data
        z = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p[:, 1] / p.sum(axis=1)
