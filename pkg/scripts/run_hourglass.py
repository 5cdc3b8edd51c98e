"""Quadrant distribution of DGCNN critical points across training seeds.

Cross-validates DGCNN on a synthetic cohort, takes the best fold, retrains its
split with several seeds and pools the test scans' critical points per seed.
Optionally writes the en-face and sagittal density maps of the base seed.
"""
import argparse
from pathlib import Path

from onhgdl.experiments import N_SUBJECTS, budget_config, hourglass_protocol, synthetic_clouds
from onhgdl.interpret import density, export_projections, pool_critical_points
from onhgdl.models import model_from_bytes
from onhgdl.synth import SynthConfig
from onhgdl.training import crossval
from onhgdl.training.crossval import default_workers


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--subjects", type=int, default=N_SUBJECTS)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--workers", type=int, default=default_workers())
    ap.add_argument("--out", type=Path, help="directory for density projections of the base seed")
    args = ap.parse_args()

    clouds = synthetic_clouds(SynthConfig(), args.subjects)
    cfg = budget_config("dgcnn")
    rep = crossval(clouds, cfg, workers=args.workers)
    best = rep.best_fold
    print(f"cross-validation AUC {rep.auc_mean:.3f}; best fold {best.fold} (AUC {best.test_auc:.3f})")
    trials = hourglass_protocol(clouds, best.split, cfg, range(args.seeds),
                                models={cfg.seed: model_from_bytes(best.checkpoint)})
    for t in trials:
        counts = " ".join(f"{q}={v['count']}" for q, v in t.stats.items())
        print(f"seed {t.seed}: {counts} ratio {t.ratio:.3f} {'hourglass' if t.hourglass else '-'}")
    print(f"{sum(t.hourglass for t in trials)}/{len(trials)} seeds show superior+inferior > nasal+temporal")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        export_projections(density(pool_critical_points(trials[0].sets)), args.out)
        print(f"density maps written to {args.out}")


if __name__ == "__main__":
    main()
