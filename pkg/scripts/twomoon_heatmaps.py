"""TwoMoon: single-annotator baselines vs. the fused model, plus heatmap grids as CSV.

    python scripts/twomoon_heatmaps.py --out runs/twomoon_figs --seeds 5
"""
import argparse
from pathlib import Path

import numpy as np

from samplefusion.data import export_two_moon_csv
from samplefusion.harness import ExperimentConfig, export_heatmap_grid, prepare_data, run_experiment

GRID = ((-2.0, 2.0), (-1.5, 1.5), 100)
QUANTITIES = ("prediction", "weight[1]", "confusion_diag[1]", "confusion_diag[2]")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("runs/twomoon_figs"))
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)

    base = ExperimentConfig(dataset="twomoon")
    data = prepare_data(base)
    export_two_moon_csv(data.train, args.out / "train_points.csv")
    rows = []
    for method in ("single:1", "single:2", "mjv", "ours"):
        accs = []
        for s in range(args.seeds):
            rep = run_experiment(base.replace(method=method, model_seed=s), data)
            accs.append(rep.test_accuracy)
            if method == "ours" and s == 0:
                for q in QUANTITIES:
                    tag = q.replace("[", "").replace("]", "")
                    export_heatmap_grid(rep.model, GRID, q, args.out / f"heatmap_{tag}.csv")
        rows.append((method, accs))
        print(f"{method:10s} mean {np.mean(accs):.4f}  " + " ".join(f"{a:.4f}" for a in accs))


if __name__ == "__main__":
    main()
