"""Subject-exclusive train/validation/test splits and k-fold partitions."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from ..errors import SplitError


@dataclass
class DatasetSplit:
    train: list[str]
    validation: list[str]
    test: list[str]
    fold: int = 0
    subjects: dict[str, list[str]] = field(default_factory=dict)  # partition -> subject ids

    def as_dict(self) -> dict:
        return {"fold": self.fold, "train": self.train, "validation": self.validation, "test": self.test,
                "subjects": self.subjects}

    def partitions(self) -> dict[str, list[str]]:
        return {"train": self.train, "validation": self.validation, "test": self.test}


def _group(scans: Sequence[tuple[str, str]]) -> "OrderedDict[str, list[str]]":
    """(scan_id, subject_id) pairs -> subject -> scan ids, in first-seen order."""
    groups: OrderedDict[str, list[str]] = OrderedDict()
    seen = set()
    for scan, subject in scans:
        if scan in seen:
            raise SplitError(f"duplicate scan id {scan!r}")
        seen.add(scan)
        groups.setdefault(subject, []).append(scan)
    return groups


def _shuffled_largest_first(groups, rng: np.random.Generator) -> list[str]:
    subjects = list(groups)
    order = [subjects[i] for i in rng.permutation(len(subjects))]
    return sorted(order, key=lambda s: -len(groups[s]))  # stable: shuffle breaks size ties


def _fill(subjects: list[str], groups, targets: list[float]) -> list[list[str]]:
    """Give each subject to the partition furthest below its scan-count target."""
    parts: list[list[str]] = [[] for _ in targets]
    counts = np.zeros(len(targets))
    for s in subjects:
        i = int(np.argmax(np.asarray(targets) - counts))
        parts[i].append(s)
        counts[i] += len(groups[s])
    return parts


def split_grouped(scans: Sequence[tuple[str, str]], fractions=(0.70, 0.15, 0.15), seed: int = 0,
                  fold: int = 0) -> DatasetSplit:
    """Train/validation/test split that never separates a subject's scans."""
    groups = _group(scans)
    if len(groups) < 3:
        raise SplitError(f"need at least 3 subjects, got {len(groups)}")
    total = sum(len(v) for v in groups.values())
    biggest = max(len(v) for v in groups.values())
    if biggest > fractions[0] * total:
        raise SplitError(f"one subject holds {biggest} of {total} scans, more than the training fraction")
    rng = np.random.default_rng(seed)
    order = _shuffled_largest_first(groups, rng)
    # seed each partition with one subject so none is empty, then fill greedily
    fr = np.asarray(fractions, dtype=np.float64)
    targets = list(fr / fr.sum() * total)
    parts = _fill(order, groups, targets)
    for i in range(3):
        if not parts[i] and fr[i] > 0:
            donor = max(range(3), key=lambda j: len(parts[j]))
            parts[i].append(parts[donor].pop())
    return _make_split(parts, groups, fold)


def _make_split(parts, groups, fold) -> DatasetSplit:
    names = ("train", "validation", "test")
    scans = [sorted(sc for s in p for sc in groups[s]) for p in parts]
    return DatasetSplit(scans[0], scans[1], scans[2], fold, {n: sorted(p) for n, p in zip(names, parts)})


def kfold_grouped(scans: Sequence[tuple[str, str]], k: int = 5, seed: int = 0,
                  inner_fractions=(0.70, 0.15)) -> list[DatasetSplit]:
    """k subject-disjoint test folds; the remaining subjects are re-split into train/validation 70:15."""
    groups = _group(scans)
    if len(groups) < k:
        raise SplitError(f"need at least {k} subjects for {k} folds, got {len(groups)}")
    rng = np.random.default_rng(seed)
    order = _shuffled_largest_first(groups, rng)
    folds: list[list[str]] = [[] for _ in range(k)]
    counts = np.zeros(k)
    for s in order:
        i = int(np.argmin(counts))
        folds[i].append(s)
        counts[i] += len(groups[s])
    splits = []
    for i in range(k):
        rest = [s for j in range(k) if j != i for s in folds[j]]
        rest_order = _shuffled_largest_first({s: groups[s] for s in rest}, np.random.default_rng([seed, i]))
        total = sum(len(groups[s]) for s in rest)
        fr = np.asarray(inner_fractions, dtype=np.float64)
        tr, va = _fill(rest_order, groups, list(fr / fr.sum() * total))
        if not va and len(tr) > 1:
            va.append(tr.pop())
        splits.append(_make_split([tr, va, folds[i]], groups, i))
    return splits


def check_exclusive(split: DatasetSplit, subject_of: dict[str, str]) -> list[str]:
    """Subjects appearing in more than one partition (empty when the split is valid)."""
    owner: dict[str, str] = {}
    bad = set()
    for name, ids in split.partitions().items():
        for scan in ids:
            s = subject_of[scan]
            if owner.setdefault(s, name) != name:
                bad.add(s)
    return sorted(bad)
