"""Training-time augmentation and the deterministic evaluation sampler."""
from __future__ import annotations

import zlib
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import ConfigError, InputError
from ..geometry import OnhPointCloud
from ..models.base import normalize_features


@dataclass
class AugmentationConfig:
    n_points: int = 1024
    crop: bool = True
    crop_max_deg: float = 45.0
    rotate: bool = True
    azimuth_deg: float = 15.0
    tilt_deg: float = 5.0
    full_azimuth: bool = False
    sample: bool = True
    noise: bool = True
    sigma_um: float = 5.0
    crop_retries: int = 3

    def __post_init__(self):
        if self.n_points < 1:
            raise ConfigError("n_points must be >= 1")
        if self.sigma_um < 0:
            raise ConfigError("sigma_um must be >= 0")
        if not 0.0 <= self.crop_max_deg < 360.0:
            raise ConfigError("crop_max_deg must lie in [0, 360)")

    def to_dict(self) -> dict:
        return asdict(self)


def rotation_z(deg: float) -> np.ndarray:
    t = np.deg2rad(deg)
    c, s = np.cos(t), np.sin(t)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_tilt(deg: float, axis_deg: float) -> np.ndarray:
    """Rotation by ``deg`` about the in-plane axis at azimuth ``axis_deg``."""
    a = np.deg2rad(axis_deg)
    k = np.array([np.cos(a), np.sin(a), 0.0])
    t = np.deg2rad(deg)
    kx = np.array([[0.0, -k[2], k[1]], [k[2], 0.0, -k[0]], [-k[1], k[0], 0.0]])
    return np.eye(3) + np.sin(t) * kx + (1.0 - np.cos(t)) * (kx @ kx)


def sector_mask(xyz: np.ndarray, start_deg: float, width_deg: float) -> np.ndarray:
    """True for points kept after removing the wedge [start, start + width) of azimuth."""
    az = np.degrees(np.arctan2(xyz[:, 1], xyz[:, 0]))
    rel = np.mod(az - start_deg, 360.0)
    return ~(rel < width_deg)


def augment_indices(cloud: OnhPointCloud, cfg: AugmentationConfig,
                    rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """(N, 4) network input plus the source row of each output point."""
    n = cfg.n_points
    if len(cloud) < n:
        raise InputError(f"skip-sample: {cloud.scan_id} has {len(cloud)} points, fewer than {n}")
    keep = np.arange(len(cloud))
    if cfg.crop and cfg.crop_max_deg > 0:
        width = rng.uniform(0.0, cfg.crop_max_deg)
        start = rng.uniform(0.0, 360.0)
        for _ in range(cfg.crop_retries + 1):
            idx = np.nonzero(sector_mask(cloud.xyz, start, width))[0]
            if idx.size >= n:
                keep = idx
                break
            width *= 0.5
    xyz = cloud.xyz[keep]
    if cfg.rotate:
        az = rng.uniform(0.0, 360.0) if cfg.full_azimuth else rng.uniform(-cfg.azimuth_deg, cfg.azimuth_deg)
        tilt = rng.uniform(-cfg.tilt_deg, cfg.tilt_deg)
        tilt_axis = rng.uniform(0.0, 180.0)
        rot = rotation_tilt(tilt, tilt_axis) @ rotation_z(az)
        xyz = xyz @ rot.T
    if cfg.sample:
        pick = np.sort(rng.choice(len(keep), size=n, replace=False))
    else:
        pick = np.arange(n)
    xyz = xyz[pick]
    src = keep[pick]
    if cfg.noise and cfg.sigma_um > 0:
        xyz = xyz + rng.normal(0.0, cfg.sigma_um, size=xyz.shape)
    feats = np.column_stack([xyz, cloud.thickness[src]])
    return normalize_features(feats), src


def augment(cloud: OnhPointCloud, cfg: AugmentationConfig, rng: np.random.Generator) -> np.ndarray:
    return augment_indices(cloud, cfg, rng)[0]


def scan_seed(scan_id: str, seed: int = 0) -> np.random.Generator:
    return np.random.default_rng([seed, zlib.crc32(scan_id.encode())])


def eval_indices(cloud: OnhPointCloud, n_points: int | None, seed: int = 0) -> np.ndarray:
    """Fixed per-scan subsample (sorted rows); the whole cloud when n_points is None or covers it."""
    if n_points is None or n_points >= len(cloud):
        return np.arange(len(cloud))
    return np.sort(scan_seed(cloud.scan_id, seed).choice(len(cloud), size=n_points, replace=False))


def eval_input(cloud: OnhPointCloud, n_points: int | None, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    idx = eval_indices(cloud, n_points, seed)
    return normalize_features(cloud.features()[idx]), idx
