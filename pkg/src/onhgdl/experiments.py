"""Synthetic experiment protocols shared by the acceptance tests and scripts/.

The default budget (256 points per cloud, at most 25 epochs with patience 10)
keeps a full five-fold DGCNN run on 120 synthetic subjects within an hour on
one CPU core. The library defaults in TrainConfig are unchanged.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from .geometry import OnhPointCloud, build_point_cloud
from .interpret import (CriticalPointSet, density, extract_critical_points, hourglass_ratio, pool_critical_points,
                        quadrant_stats)
from .synth import SynthConfig, generate_dataset
from .training import AugmentationConfig, DatasetSplit, TrainConfig, train_model

N_SUBJECTS = 120


def synthetic_clouds(cfg: SynthConfig | None = None, n_subjects: int = N_SUBJECTS, scans_per_subject: int = 1,
                     seed: int | None = None) -> list[OnhPointCloud]:
    """Generate a balanced synthetic cohort and run it through the geometry pipeline."""
    samples = generate_dataset(cfg or SynthConfig(), n_subjects, scans_per_subject, seed=seed)
    return [build_point_cloud(s.volume) for s in samples]


def budget_config(model: str, seed: int = 0, n_points: int = 256, max_epochs: int = 25, patience: int = 10,
                  **overrides) -> TrainConfig:
    return TrainConfig(model=model, augmentation=AugmentationConfig(n_points=n_points), max_epochs=max_epochs,
                       patience=patience, seed=seed, **overrides)


@dataclass
class HourglassTrial:
    seed: int
    stats: dict[str, dict]
    ratio: float
    sets: list[CriticalPointSet]

    @property
    def vertical(self) -> int:
        return self.stats["superior"]["count"] + self.stats["inferior"]["count"]

    @property
    def horizontal(self) -> int:
        return self.stats["nasal"]["count"] + self.stats["temporal"]["count"]

    @property
    def hourglass(self) -> bool:
        return self.vertical > self.horizontal


def critical_sets(model, clouds: Sequence[OnhPointCloud], n_points: int, seed: int) -> list[CriticalPointSet]:
    return [extract_critical_points(model, c, n_points, seed) for c in clouds]


def hourglass_trial(clouds: Sequence[OnhPointCloud], split: DatasetSplit, cfg: TrainConfig,
                    model=None) -> HourglassTrial:
    """Train on ``split`` (unless a trained model is given) and pool the test scans' critical points."""
    by_id = {c.scan_id: c for c in clouds}
    if model is None:
        with threadpool_limits(limits=1):
            model = train_model([by_id[s] for s in split.train], [by_id[s] for s in split.validation], cfg).model
    sets = critical_sets(model, [by_id[s] for s in split.test], cfg.n_eval, cfg.seed)
    stats = quadrant_stats(density(pool_critical_points(sets)))
    return HourglassTrial(cfg.seed, stats, hourglass_ratio(stats), sets)


def hourglass_protocol(clouds: Sequence[OnhPointCloud], split: DatasetSplit, cfg: TrainConfig,
                       seeds: Sequence[int] = range(5), models: dict | None = None) -> list[HourglassTrial]:
    """Repeat the hourglass trial on one split with different training seeds.

    ``models`` maps seeds to already-trained models (e.g. the cross-validation
    fold model for the base seed) so they are not retrained.
    """
    models = models or {}
    return [hourglass_trial(clouds, split, replace(cfg, seed=int(s)), models.get(int(s))) for s in seeds]


def tissue_fraction(sets: Sequence[CriticalPointSet], n_labels: int = 8) -> np.ndarray:
    t = np.concatenate([s.tissue for s in sets]) if sets else np.zeros(0, np.int64)
    return np.bincount(t, minlength=n_labels) / max(len(t), 1)
