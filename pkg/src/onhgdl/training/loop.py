"""Minibatch Adam training with validation-AUC checkpoint selection."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from ..core import tensor as T
from ..core.optim import AdamState, adam_step
from ..errors import ConfigError, InputError, MetricError, NumericError
from ..geometry import OnhPointCloud
from ..models import FAMILIES, PointCloudModel, build_model
from .augment import AugmentationConfig, augment, eval_input
from .metrics import roc_auc


@dataclass
class TrainConfig:
    model: str = "dgcnn"
    model_config: dict = field(default_factory=dict)
    augmentation: AugmentationConfig = field(default_factory=AugmentationConfig)
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    batch_size: int = 8
    max_epochs: int = 300
    patience: int = 20
    class_weights: str = "inverse"   # or "none"
    eval_points: int | None = None   # None: same as augmentation.n_points
    eval_batch: int = 16
    folds: int = 5
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.augmentation, dict):
            self.augmentation = AugmentationConfig(**self.augmentation)
        if self.model not in FAMILIES:
            raise ConfigError(f"unknown model family {self.model!r}")
        if self.batch_size < 1 or self.max_epochs < 0 or self.patience < 1:
            raise ConfigError("batch_size and patience must be >= 1, max_epochs >= 0")
        if self.lr < 0:
            raise ConfigError("learning rate must be >= 0")
        if self.class_weights not in ("inverse", "none"):
            raise ConfigError("class_weights must be 'inverse' or 'none'")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")

    @property
    def n_eval(self) -> int:
        return self.eval_points if self.eval_points is not None else self.augmentation.n_points

    def to_dict(self) -> dict:
        return asdict(self)

    def hash(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


@dataclass
class TrainResult:
    model: PointCloudModel
    history: list[dict]
    best_epoch: int
    best_val_auc: float | None
    checkpoint: bytes

    @property
    def checkpoint_sha256(self) -> str:
        return hashlib.sha256(self.checkpoint).hexdigest()


def labels_of(clouds: Sequence[OnhPointCloud]) -> np.ndarray:
    out = []
    for c in clouds:
        if c.class_label not in ("glaucoma", "non-glaucoma"):
            raise InputError(f"{c.scan_id}: training needs labelled clouds, got {c.class_label!r}")
        out.append(1 if c.class_label == "glaucoma" else 0)
    return np.asarray(out, dtype=np.int64)


def class_weights(labels: np.ndarray, mode: str) -> np.ndarray | None:
    if mode == "none":
        return None
    counts = np.bincount(labels, minlength=2).astype(np.float64)
    w = np.zeros(2)
    present = counts > 0
    w[present] = counts.sum() / (present.sum() * counts[present])
    return w


def predict(model: PointCloudModel, inputs: Sequence[np.ndarray], batch: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Glaucoma probabilities and logits for a list of (N, 4) inputs, grouped by point count."""
    probs = np.empty(len(inputs))
    logits = np.empty((len(inputs), 2))
    by_size: dict[int, list[int]] = {}
    for i, x in enumerate(inputs):
        by_size.setdefault(len(x), []).append(i)
    for idx in by_size.values():
        for s in range(0, len(idx), batch):
            part = idx[s:s + batch]
            lg = model.forward(np.stack([inputs[i] for i in part]), training=False).logits.data
            logits[part] = lg
            z = lg - lg.max(axis=1, keepdims=True)
            e = np.exp(z)
            probs[part] = e[:, 1] / e.sum(axis=1)
    return probs, logits


def _ce(logits: np.ndarray, labels: np.ndarray, weights) -> float:
    return float(T.softmax_cross_entropy(T.as_tensor(logits), labels, weights).data)


def evaluate(model: PointCloudModel, clouds: Sequence[OnhPointCloud], cfg: TrainConfig) -> dict:
    inputs = [eval_input(c, cfg.n_eval, cfg.seed)[0] for c in clouds]
    probs, logits = predict(model, inputs, cfg.eval_batch)
    labels = labels_of(clouds)
    try:
        auc = roc_auc(probs, labels)
    except MetricError:
        auc = float("nan")
    return {"scores": probs, "labels": labels, "auc": auc, "loss": _ce(logits, labels, None),
            "scan_ids": [c.scan_id for c in clouds]}


def train_model(train: Sequence[OnhPointCloud], validation: Sequence[OnhPointCloud], cfg: TrainConfig,
                log=None) -> TrainResult:
    """Train ``cfg.model`` and return the best-validation-AUC checkpoint.

    Selection is by validation AUC, ties to lower validation loss. Training
    stops after ``patience`` epochs without a better checkpoint.
    """
    if not train or not validation:
        raise InputError("training and validation sets must be non-empty")
    model = build_model(cfg.model, cfg.model_config, seed=cfg.seed)
    if cfg.augmentation.n_points < model.min_points():
        raise ConfigError(f"n_points {cfg.augmentation.n_points} is below the model minimum {model.min_points()}")
    y_train = labels_of(train)
    weights = class_weights(y_train, cfg.class_weights)
    val_inputs = [eval_input(c, cfg.n_eval, cfg.seed)[0] for c in validation]
    y_val = labels_of(validation)
    val_two_class = len(np.unique(y_val)) == 2
    params = model.parameters()
    state = AdamState()
    history: list[dict] = []
    best = (-np.inf, np.inf)
    best_state, best_epoch, stale = model.state(), -1, 0
    for epoch in range(cfg.max_epochs):
        rng = np.random.default_rng([cfg.seed, epoch, 1])
        order = rng.permutation(len(train))
        losses = []
        for s in range(0, len(order), cfg.batch_size):
            part = order[s:s + cfg.batch_size]
            x = np.stack([augment(train[i], cfg.augmentation, rng) for i in part])
            res = model.forward(x, training=True, rng=rng)
            try:
                loss = T.softmax_cross_entropy(res.logits, y_train[part], weights)
            except NumericError as exc:
                raise NumericError(f"training diverged at epoch {epoch}, batch starting {s}: {exc}") from exc
            extra = model.extra_loss(res)
            if extra is not None:
                loss = T.add(loss, extra)
            value = float(loss.data)
            if not np.isfinite(value):
                raise NumericError(f"training diverged at epoch {epoch}, batch starting {s}: loss {value}")
            grads = T.backward(loss, params)
            adam_step(params, grads, state, cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps)
            losses.append(value)
        probs, logits = predict(model, val_inputs, cfg.eval_batch)
        val_loss = _ce(logits, y_val, None)
        val_auc = roc_auc(probs, y_val) if val_two_class else None
        key = (val_auc if val_two_class else -val_loss, -val_loss)
        improved = key > best
        if improved:
            best, best_state, best_epoch, stale = key, model.state(), epoch, 0
        else:
            stale += 1
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "val_loss": val_loss,
                        "val_auc": val_auc, "improved": bool(improved)})
        if log is not None:
            log(history[-1])
        if stale >= cfg.patience:
            break
    model.load_state(best_state)
    best_auc = float(best[0]) if val_two_class and best_epoch >= 0 else None
    return TrainResult(model, history, best_epoch, best_auc, model.to_bytes())
