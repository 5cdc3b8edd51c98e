"""``onhgdl`` command line: synth, extract, train, crossval, evaluate, interpret.

Exit codes: 0 success, 2 bad input/config/usage, 3 I/O failure. Every
command writes into a temporary sibling directory and renames it into place,
so a failed run leaves no partial output directory.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import os
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

import numpy as np

from . import __version__, io
from .errors import OnhError
from .geometry import CROP_RADIUS_UM, TissueLabel, build_point_cloud
from .interpret import (DENSITY_RADIUS_UM, critical_rows, density, density_rows, export_projections,
                        extract_critical_points, pool_critical_points, quadrant_stats)
from .models import load_model, model_from_bytes
from .synth import SynthConfig, generate_dataset
from .training import (TrainConfig, crossval, evaluate, per_tissue_experiment, roc_auc, split_grouped,
                       train_model)
from .training.crossval import default_workers, json_safe
from .training.loop import labels_of
from .training.metrics import roc_curve

SEG_SUFFIX = ".onhseg"
PC_SUFFIX = ".onhpc"
CKPT_SUFFIX = ".onhw"


class UsageError(Exception):
    """Reported with exit code 2."""


# ---------------------------------------------------------------- plumbing

def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"], cwd=Path(__file__).resolve().parent,
                             capture_output=True, text=True, timeout=10)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dump(path: Path, obj) -> None:
    path.write_text(json.dumps(json_safe(obj), indent=2, sort_keys=True, allow_nan=False) + "\n")


def _read_config(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"config {path} must hold a JSON object")
    return data


class OutputDir:
    """Temporary directory renamed onto ``target`` only when the command succeeds."""

    def __init__(self, target):
        self.target = Path(target)
        if self.target.exists() and (not self.target.is_dir() or any(self.target.iterdir())):
            raise UsageError(f"output directory {self.target} exists and is not empty")
        self.target.parent.mkdir(parents=True, exist_ok=True)
        self.path = Path(tempfile.mkdtemp(prefix=f".{self.target.name}.", dir=self.target.parent))
        self.started = _now()

    def commit(self, manifest: dict) -> None:
        files = sorted(p for p in self.path.rglob("*") if p.is_file())
        manifest = dict(manifest, started=self.started, finished=_now(), version=__version__,
                        git_describe=_git_describe(), output_dir=str(self.target),
                        outputs={str(p.relative_to(self.path)): _sha256(p) for p in files})
        _dump(self.path / "manifest.json", manifest)
        if self.target.exists():
            self.target.rmdir()
        os.replace(self.path, self.target)

    def discard(self) -> None:
        shutil.rmtree(self.path, ignore_errors=True)


def _load_clouds(data_dir) -> list:
    files = io.list_files(data_dir, PC_SUFFIX)
    if not files:
        raise UsageError(f"no {PC_SUFFIX} inputs in {data_dir}")
    return [io.read_cloud(p) for p in files]


def _train_config(args, base: dict) -> TrainConfig:
    d = dict(base)
    if getattr(args, "model", None):
        d["model"] = args.model
    if args.seed is not None:
        d["seed"] = args.seed
    return TrainConfig.from_dict(d)


def _require_two_classes(clouds) -> None:
    if len(set(labels_of(clouds).tolist())) < 2:
        raise UsageError("data holds a single class; training and AUC need both")


def _scores_csv(path: Path, rows) -> None:
    lines = ["fold,scan_id,label,score"] + [f"{f},{s},{y},{p!r}" for f, s, y, p in rows]
    path.write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> dict:
    raw = _read_config(args.config)
    run = {k: raw.pop(k) for k in ("n_subjects", "scans_per_subject", "class_balance") if k in raw}
    if args.seed is not None:
        raw["seed"] = args.seed
    cfg = SynthConfig.from_dict(raw)
    n_subjects = int(run.get("n_subjects", args.n_subjects))
    scans = int(run.get("scans_per_subject", args.scans_per_subject))
    out = OutputDir(args.out)
    try:
        samples = generate_dataset(cfg, n_subjects, scans, float(run.get("class_balance", 0.5)))
        for s in samples:
            io.write_volume(out.path / f"{s.volume.scan_id}{SEG_SUFFIX}", s.volume)
        _dump(out.path / "synth_config.json", dict(cfg.to_dict(), n_subjects=n_subjects, scans_per_subject=scans))
        out.commit({"command": "synth", "config_hash": cfg.hash(), "seed": cfg.seed, "inputs": [args.config]})
    except BaseException:
        out.discard()
        raise
    return {"files": len(samples)}


def cmd_extract(args) -> dict:
    files = io.list_files(args.input, SEG_SUFFIX) if Path(args.input).is_dir() else []
    if not files:
        raise UsageError(f"no inputs: no {SEG_SUFFIX} files in {args.input}")
    out = OutputDir(args.out)
    summary = {"ok": [], "failed": {}}
    try:
        for p in files:
            try:
                vol = io.read_volume(p)
                cloud = build_point_cloud(vol, radius=args.crop_radius_um)
                io.write_cloud(out.path / f"{p.stem}{PC_SUFFIX}", cloud)
                summary["ok"].append(p.name)
            except OnhError as exc:
                summary["failed"][p.name] = f"{type(exc).__name__}: {exc}"
        for name, msg in summary["failed"].items():
            print(f"FAILED {name}: {msg}", file=sys.stderr)
        if summary["failed"] and not args.keep_going:
            raise UsageError(f"{len(summary['failed'])} of {len(files)} inputs failed")
        _dump(out.path / "summary.json", summary)
        out.commit({"command": "extract", "config_hash": None, "seed": None, "inputs": [str(args.input)],
                    "crop_radius_um": args.crop_radius_um})
    except BaseException:
        out.discard()
        raise
    return {"ok": len(summary["ok"]), "failed": len(summary["failed"])}


def cmd_train(args) -> dict:
    cfg = _train_config(args, _read_config(args.config))
    clouds = _load_clouds(args.data)
    _require_two_classes(clouds)
    if args.tissue:
        from .training.crossval import filter_tissue
        clouds = filter_tissue(clouds, args.tissue, max(cfg.augmentation.n_points, cfg.n_eval))
    split = split_grouped([(c.scan_id, c.subject_id) for c in clouds], seed=cfg.seed)
    by_id = {c.scan_id: c for c in clouds}
    out = OutputDir(args.out)
    try:
        res = train_model([by_id[s] for s in split.train], [by_id[s] for s in split.validation], cfg)
        ev = evaluate(res.model, [by_id[s] for s in split.test], cfg)
        (out.path / f"model{CKPT_SUFFIX}").write_bytes(res.checkpoint)
        report = {"model": cfg.model, "seed": cfg.seed, "config_hash": cfg.hash(), "config": cfg.to_dict(),
                  "tissue": args.tissue or "ALL", "split": split.as_dict(), "history": res.history,
                  "best_epoch": res.best_epoch, "best_val_auc": res.best_val_auc,
                  "test_auc": ev["auc"], "checkpoint_sha256": res.checkpoint_sha256}
        _dump(out.path / "report.json", report)
        _scores_csv(out.path / "scores.csv", [(0, s, int(y), float(p))
                                              for s, y, p in zip(ev["scan_ids"], ev["labels"], ev["scores"])])
        out.commit({"command": "train", "config_hash": cfg.hash(), "seed": cfg.seed, "inputs": [str(args.data)]})
    except BaseException:
        out.discard()
        raise
    return {"test_auc": ev["auc"], "best_val_auc": res.best_val_auc}


def _roc_png(report, path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 5), dpi=100)
    for f in report.folds:
        if f.roc["fpr"]:
            ax.plot(f.roc["fpr"], f.roc["tpr"], label=f"fold {f.fold} (AUC {f.test_auc:.3f})")
    ax.plot([0, 1], [0, 1], color="grey", lw=0.8, ls=":")
    ax.set_xlabel("false positive rate")
    ax.set_ylabel("true positive rate")
    ax.set_title(f"{report.model} {report.tissue}: AUC {report.auc_mean:.3f} +/- {report.auc_std:.3f}")
    ax.legend(loc="lower right", fontsize=8)
    fig.savefig(path, metadata={"Software": None})
    plt.close(fig)


def cmd_crossval(args) -> dict:
    cfg = _train_config(args, _read_config(args.config))
    clouds = _load_clouds(args.data)
    _require_two_classes(clouds)
    out = OutputDir(args.out)
    try:
        workers = args.threads or default_workers()
        if args.tissue:
            report = per_tissue_experiment(clouds, args.tissue, cfg, workers=workers)
        else:
            report = crossval(clouds, cfg, workers=workers)
        for f in report.folds:
            (out.path / f"fold{f.fold}{CKPT_SUFFIX}").write_bytes(f.checkpoint)
        _dump(out.path / "report.json", report.to_dict())
        _scores_csv(out.path / "scores.csv", report.score_rows())
        _roc_png(report, out.path / "roc.png")
        out.commit({"command": "crossval", "config_hash": cfg.hash(), "seed": cfg.seed, "inputs": [str(args.data)],
                    "threads": workers})
    except BaseException:
        out.discard()
        raise
    return {"auc_mean": report.auc_mean, "auc_std": report.auc_std}


def _checkpoint_model(path):
    try:
        return load_model(path)
    except OnhError as exc:
        raise UsageError(f"checkpoint {path}: {exc}") from exc


def cmd_evaluate(args) -> dict:
    cfg = _train_config(args, _read_config(args.config))
    model = _checkpoint_model(args.checkpoint)
    clouds = _load_clouds(args.data)
    out = OutputDir(args.out)
    try:
        ev = evaluate(model, clouds, cfg)
        _scores_csv(out.path / "scores.csv", [(0, s, int(y), float(p))
                                              for s, y, p in zip(ev["scan_ids"], ev["labels"], ev["scores"])])
        report = {"auc": None if np.isnan(ev["auc"]) else ev["auc"], "n_scans": len(clouds),
                  "checkpoint_sha256": _sha256(Path(args.checkpoint)), "config_hash": cfg.hash(), "seed": cfg.seed}
        if report["auc"] is not None:
            fpr, tpr, _ = roc_curve(ev["scores"], ev["labels"])
            report["roc"] = {"fpr": fpr.tolist(), "tpr": tpr.tolist()}
        _dump(out.path / "report.json", report)
        out.commit({"command": "evaluate", "config_hash": cfg.hash(), "seed": cfg.seed,
                    "inputs": [str(args.data), str(args.checkpoint)]})
    except BaseException:
        out.discard()
        raise
    return {"auc": report["auc"]}


def _interpret_inputs(args):
    """(model, test scan ids or None, n_points, seed) from --checkpoint or --crossval-dir."""
    if args.crossval_dir:
        rep = json.loads((Path(args.crossval_dir) / "report.json").read_text())
        fold = rep["best_fold"] if args.fold is None else args.fold
        entry = next((f for f in rep["folds"] if f["fold"] == fold), None)
        if entry is None:
            raise UsageError(f"fold {fold} not in {args.crossval_dir}/report.json")
        ckpt = Path(args.crossval_dir) / f"fold{fold}{CKPT_SUFFIX}"
        blob = ckpt.read_bytes()
        if hashlib.sha256(blob).hexdigest() != entry["checkpoint_sha256"]:
            raise UsageError(f"{ckpt} does not match the checkpoint hash in report.json")
        try:
            model = model_from_bytes(blob)
        except OnhError as exc:
            raise UsageError(f"checkpoint {ckpt}: {exc}") from exc
        cfg = TrainConfig.from_dict(rep["config"])
        return model, entry["split"]["test"], cfg.n_eval, cfg.seed, rep.get("tissue", "ALL")
    if not args.checkpoint:
        raise UsageError("interpret needs --checkpoint or --crossval-dir")
    model = _checkpoint_model(args.checkpoint)
    scans = None
    if args.scans:
        text = Path(args.scans).read_text()
        try:
            obj = json.loads(text)
            scans = obj["test"] if isinstance(obj, dict) else list(obj)
        except json.JSONDecodeError:
            scans = [ln.strip() for ln in text.splitlines() if ln.strip()]
    cfg = _train_config(args, _read_config(args.config))
    return model, scans, cfg.n_eval, cfg.seed, args.tissue or "ALL"


def cmd_interpret(args) -> dict:
    model, scans, n_points, seed, tissue = _interpret_inputs(args)
    clouds = _load_clouds(args.data)
    if tissue and tissue != "ALL":
        clouds = [c.only_tissue(TissueLabel.parse(tissue)) for c in clouds]
    if scans is not None:
        by_id = {c.scan_id: c for c in clouds}
        missing = [s for s in scans if s not in by_id]
        if missing:
            raise UsageError(f"test scans missing from {args.data}: {missing[:5]}")
        clouds = [by_id[s] for s in scans]
    out = OutputDir(args.out)
    try:
        sets = [extract_critical_points(model, c, n_points, seed) for c in clouds]
        (out.path / "critical_points.csv").write_text("\n".join(critical_rows(sets)) + "\n")
        pooled = pool_critical_points(sets)
        dmap = density(pooled, args.radius_um)
        (out.path / "density.csv").write_text("\n".join(density_rows(pooled, dmap)) + "\n")
        stats = quadrant_stats(dmap)
        _dump(out.path / "quadrant_stats.json", stats)
        export_projections(dmap, out.path, bin_um=args.bin_um)
        out.commit({"command": "interpret", "config_hash": None, "seed": seed, "radius_um": args.radius_um,
                    "inputs": [str(args.data), str(args.checkpoint or args.crossval_dir)],
                    "scans": [c.scan_id for c in clouds]})
    except BaseException:
        out.discard()
        raise
    return {"scans": len(sets), "points": len(pooled), "quadrants": stats}


# ---------------------------------------------------------------- parser

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="onhgdl", description="Point-cloud glaucoma classification pipeline.")
    p.add_argument("--version", action="version", version=f"onhgdl {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config=True):
        sp.add_argument("--out", required=True, help="output directory (must be absent or empty)")
        sp.add_argument("--seed", type=int, default=None)
        if config:
            sp.add_argument("--config", default=None, help="JSON config file")

    sp = sub.add_parser("synth", help="generate a labelled synthetic dataset (ONHSEG volumes)")
    common(sp)
    sp.add_argument("--n-subjects", type=int, default=120)
    sp.add_argument("--scans-per-subject", type=int, default=1)
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("extract", help="ONHSEG volumes -> aligned ONHPC point clouds")
    sp.add_argument("input", help="directory of ONHSEG files")
    common(sp, config=False)
    sp.add_argument("--keep-going", action="store_true", help="write successful outputs even if some inputs fail")
    sp.add_argument("--crop-radius-um", type=float, default=CROP_RADIUS_UM)
    sp.set_defaults(func=cmd_extract)

    for name, func, helptext in (("train", cmd_train, "train one model on a 70/15/15 split"),
                                 ("crossval", cmd_crossval, "5-fold subject-exclusive cross-validation")):
        sp = sub.add_parser(name, help=helptext)
        sp.add_argument("data", help="directory of ONHPC files")
        common(sp)
        sp.add_argument("--model", choices=("pointnet", "dgcnn"), default=None)
        sp.add_argument("--tissue", default=None, help="restrict clouds to one tissue, e.g. RNFL_PLT")
        sp.add_argument("--threads", type=int, default=None, help="worker processes (default ONHGDL_THREADS or cores)")
        sp.set_defaults(func=func)

    sp = sub.add_parser("evaluate", help="score clouds with a checkpoint")
    sp.add_argument("data")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.set_defaults(func=cmd_evaluate, model=None)

    sp = sub.add_parser("interpret", help="critical points, density maps and quadrant statistics")
    sp.add_argument("data")
    common(sp)
    sp.add_argument("--checkpoint", default=None)
    sp.add_argument("--crossval-dir", default=None, help="use the best fold's checkpoint and test scans")
    sp.add_argument("--fold", type=int, default=None)
    sp.add_argument("--scans", default=None, help="scan-id list (text, JSON list or split JSON with 'test')")
    sp.add_argument("--tissue", default=None)
    sp.add_argument("--radius-um", type=float, default=DENSITY_RADIUS_UM)
    sp.add_argument("--bin-um", type=float, default=100.0)
    sp.set_defaults(func=cmd_interpret, model=None)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        result = args.func(args)
    except (UsageError, OnhError, KeyError, ValueError) as exc:
        print(f"onhgdl {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"onhgdl {args.command}: I/O error: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(json_safe(result), sort_keys=True, default=float))
    return 0


if __name__ == "__main__":
    sys.exit(main())
