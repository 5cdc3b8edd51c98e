"""Per-tissue DGCNN cross-validation with the glaucoma signal confined to the RNFL."""
import argparse

from onhgdl.experiments import N_SUBJECTS, budget_config, synthetic_clouds
from onhgdl.geometry import TissueLabel
from onhgdl.synth import SynthConfig
from onhgdl.training import per_tissue_experiment
from onhgdl.training.crossval import default_workers


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--tissues", nargs="+", default=["RNFL_PLT", "CHOROID"],
                    choices=[t.name for t in TissueLabel if t] + ["ALL"])
    ap.add_argument("--subjects", type=int, default=N_SUBJECTS)
    ap.add_argument("--model", default="dgcnn", choices=["dgcnn", "pointnet"])
    ap.add_argument("--workers", type=int, default=default_workers())
    args = ap.parse_args()

    clouds = synthetic_clouds(SynthConfig().rnfl_only(), args.subjects)
    cfg = budget_config(args.model)
    for tissue in args.tissues:
        rep = per_tissue_experiment(clouds, tissue, cfg, workers=args.workers)
        print(f"{tissue:9s} AUC {rep.auc_mean:.3f} +- {rep.auc_std:.3f}")


if __name__ == "__main__":
    main()
