"""Five-fold cross-validation of PointNet and/or DGCNN on a synthetic cohort.

    python scripts/run_crossval.py --models dgcnn pointnet --out runs/cv
"""
import argparse
import json
import time
from pathlib import Path

from onhgdl.experiments import N_SUBJECTS, budget_config, synthetic_clouds
from onhgdl.synth import SynthConfig
from onhgdl.training import crossval
from onhgdl.training.crossval import default_workers


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--models", nargs="+", default=["dgcnn", "pointnet"], choices=["dgcnn", "pointnet"])
    ap.add_argument("--subjects", type=int, default=N_SUBJECTS)
    ap.add_argument("--points", type=int, default=256)
    ap.add_argument("--epochs", type=int, default=25)
    ap.add_argument("--patience", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=default_workers())
    ap.add_argument("--out", type=Path)
    args = ap.parse_args()

    clouds = synthetic_clouds(SynthConfig(), args.subjects)
    for family in args.models:
        cfg = budget_config(family, args.seed, args.points, args.epochs, args.patience)
        t0 = time.perf_counter()
        rep = crossval(clouds, cfg, workers=args.workers)
        aucs = ", ".join(f"{f.test_auc:.3f}" for f in rep.folds)
        print(f"{family}: AUC {rep.auc_mean:.3f} +- {rep.auc_std:.3f} (folds {aucs}) "
              f"in {time.perf_counter() - t0:.0f} s")
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            (args.out / f"{family}_report.json").write_text(json.dumps(rep.to_dict(), indent=1, sort_keys=True))
            for f in rep.folds:
                (args.out / f"{family}_fold{f.fold}.onhw").write_bytes(f.checkpoint)


if __name__ == "__main__":
    main()
