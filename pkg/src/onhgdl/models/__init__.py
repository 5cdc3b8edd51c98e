"""PointNet and DGCNN classifiers plus checkpoint loading."""
from __future__ import annotations

from pathlib import Path

from ..core import checkpoint
from ..errors import ModelError
from .base import ForwardResult, PointCloudModel, normalize_features
from .dgcnn import Dgcnn, DgcnnConfig, edge_conv, knn_graph
from .pointnet import PointNet, PointNetConfig, tnet_apply, transform_regularizer

FAMILIES = {"pointnet": (PointNet, PointNetConfig), "dgcnn": (Dgcnn, DgcnnConfig)}


def build_model(family: str, config: dict | None = None, seed: int = 0) -> PointCloudModel:
    if family not in FAMILIES:
        raise ModelError(f"unknown model family {family!r}")
    cls, cfg_cls = FAMILIES[family]
    return cls(cfg_cls(**(config or {})), seed=seed)


def model_from_bytes(blob: bytes) -> PointCloudModel:
    arch, arrays = checkpoint.decode(blob)
    try:
        model = build_model(arch["family"], arch["config"])
    except (KeyError, TypeError) as exc:
        raise ModelError(f"checkpoint architecture block is invalid: {exc}") from exc
    model.load_state(arrays)
    return model


def load_model(path) -> PointCloudModel:
    return model_from_bytes(Path(path).read_bytes())


__all__ = [
    "Dgcnn", "DgcnnConfig", "FAMILIES", "ForwardResult", "PointCloudModel", "PointNet", "PointNetConfig",
    "build_model", "edge_conv", "knn_graph", "load_model", "model_from_bytes", "normalize_features",
    "tnet_apply", "transform_regularizer",
]
