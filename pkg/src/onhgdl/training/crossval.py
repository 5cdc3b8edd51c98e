"""Five-fold subject-exclusive cross-validation and the per-tissue protocol."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import multiprocessing as mp
import numpy as np
from threadpoolctl import threadpool_limits

from ..errors import ExperimentError, InputError, SplitError
from ..geometry import OnhPointCloud, TissueLabel
from .loop import TrainConfig, TrainResult, evaluate, labels_of, train_model
from .metrics import mean_std, roc_curve
from .split import DatasetSplit, check_exclusive, kfold_grouped


def json_safe(obj):
    """Replace NaN/inf floats (undefined AUCs) by None, recursively."""
    if isinstance(obj, float):
        return obj if np.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_safe(v) for v in obj]
    return obj


@dataclass
class FoldResult:
    fold: int
    split: DatasetSplit
    test_auc: float
    roc: dict
    scores: dict[str, float]
    best_epoch: int
    best_val_auc: float | None
    history: list[dict]
    checkpoint: bytes = field(repr=False, default=b"")
    checkpoint_sha256: str = ""


@dataclass
class EvalReport:
    model: str
    tissue: str
    folds: list[FoldResult]
    auc_mean: float
    auc_std: float
    config_hash: str
    seed: int
    config: dict

    @property
    def best_fold(self) -> FoldResult:
        return max(self.folds, key=lambda f: (f.test_auc, -f.fold))

    def to_dict(self) -> dict:
        return json_safe({
            "model": self.model,
            "tissue": self.tissue,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "config": self.config,
            "auc_mean": self.auc_mean,
            "auc_std": self.auc_std,
            "best_fold": self.best_fold.fold,
            "folds": [{
                "fold": f.fold,
                "test_auc": f.test_auc,
                "best_epoch": f.best_epoch,
                "best_val_auc": f.best_val_auc,
                "checkpoint_sha256": f.checkpoint_sha256,
                "roc": f.roc,
                "split": f.split.as_dict(),
                "scores": f.scores,
                "history": f.history,
            } for f in self.folds],
        })

    def score_rows(self) -> list[tuple[int, str, int, float]]:
        rows = []
        for f in self.folds:
            for scan in f.split.test:
                rows.append((f.fold, scan, f.scores[scan][1], f.scores[scan][0]))
        return rows


def _require_both_classes(clouds: Sequence[OnhPointCloud]) -> None:
    if len(np.unique(labels_of(clouds))) < 2:
        raise InputError("cross-validation needs both glaucoma and non-glaucoma scans")


def run_fold(clouds: Sequence[OnhPointCloud], split: DatasetSplit, cfg: TrainConfig) -> FoldResult:
    by_id = {c.scan_id: c for c in clouds}
    train = [by_id[s] for s in split.train]
    val = [by_id[s] for s in split.validation]
    test = [by_id[s] for s in split.test]
    with threadpool_limits(limits=1):
        result: TrainResult = train_model(train, val, cfg)
        ev = evaluate(result.model, test, cfg)
    try:
        fpr, tpr, thr = roc_curve(ev["scores"], ev["labels"])
        roc = {"fpr": fpr.tolist(), "tpr": tpr.tolist(), "thresholds": [float(t) for t in thr[1:]]}
    except Exception:
        roc = {"fpr": [], "tpr": [], "thresholds": []}
    scores = {s: (float(p), int(y)) for s, p, y in zip(ev["scan_ids"], ev["scores"], ev["labels"])}
    return FoldResult(split.fold, split, float(ev["auc"]), roc, scores, result.best_epoch, result.best_val_auc,
                      result.history, result.checkpoint, result.checkpoint_sha256)


def _fold_job(args):
    clouds, split, cfg = args
    return run_fold(clouds, split, cfg)


def default_workers() -> int:
    env = os.environ.get("ONHGDL_THREADS")
    if env:
        return max(1, int(env))
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1))


def crossval(clouds: Sequence[OnhPointCloud], cfg: TrainConfig, tissue: str = "ALL",
             workers: int = 1) -> EvalReport:
    """k-fold protocol: per fold train, select on validation, score the held-out test subjects.

    Folds are independent, so running them in worker processes gives the same
    report as running them in sequence.
    """
    _require_both_classes(clouds)
    splits = kfold_grouped([(c.scan_id, c.subject_id) for c in clouds], k=cfg.folds, seed=cfg.seed)
    subject_of = {c.scan_id: c.subject_id for c in clouds}
    for sp in splits:
        if check_exclusive(sp, subject_of):
            raise SplitError(f"fold {sp.fold} is not subject-exclusive")
    if workers > 1 and len(splits) > 1:
        ctx = mp.get_context("fork") if "fork" in mp.get_all_start_methods() else None
        with ProcessPoolExecutor(max_workers=min(workers, len(splits)), mp_context=ctx) as pool:
            folds = list(pool.map(_fold_job, [(clouds, sp, cfg) for sp in splits]))
    else:
        folds = [run_fold(clouds, sp, cfg) for sp in splits]
    mean, std = mean_std([f.test_auc for f in folds])
    return EvalReport(cfg.model, tissue, folds, mean, std, cfg.hash(), cfg.seed, cfg.to_dict())


def filter_tissue(clouds: Sequence[OnhPointCloud], tissue: str | TissueLabel | None,
                  min_points: int) -> list[OnhPointCloud]:
    """Each cloud restricted to one tissue; raises listing scans left with too few points."""
    if tissue is None or (isinstance(tissue, str) and tissue.upper() == "ALL"):
        return list(clouds)
    label = TissueLabel.parse(tissue)
    out, short = [], []
    for c in clouds:
        sub = c.only_tissue(label)
        if len(sub) < min_points:
            short.append(f"{c.scan_id} ({len(sub)} points)")
        out.append(sub)
    if short:
        raise ExperimentError(f"{label.name} has fewer than {min_points} points in: " + ", ".join(short))
    return out


def per_tissue_experiment(clouds: Sequence[OnhPointCloud], tissue: str | TissueLabel | None,
                          cfg: TrainConfig, workers: int = 1) -> EvalReport:
    """The cross-validation protocol on one tissue's points (ALL reproduces the main experiment)."""
    need = max(cfg.augmentation.n_points, cfg.n_eval)
    subset = filter_tissue(clouds, tissue, need)
    name = "ALL" if tissue is None or str(tissue).upper() == "ALL" else TissueLabel.parse(tissue).name
    return crossval(subset, cfg, tissue=name, workers=workers)
