"""MNIST desk-scale comparison: every method on one synthesized annotator set, averaged over model seeds.

    python scripts/mnist_table.py                       # Euclidean, per-annotator corruption 0.4
    python scripts/mnist_table.py --epsilons 28,30,32   # epsilon sweep table (one seed)
    python scripts/mnist_table.py --hammer-spammer      # N_correct=3, R=5
"""
import argparse
import csv
from pathlib import Path

import numpy as np

from samplefusion.harness import ExperimentConfig, prepare_data, run_experiment, run_sweep

FUSION = ("ours", "mjv", "wdn", "tracereg", "mbem")


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--corruption", type=float, default=0.4)
    ap.add_argument("--seeds", type=int, default=3)
    ap.add_argument("--hammer-spammer", action="store_true")
    ap.add_argument("--epsilons", help="comma separated epsilon values for a sweep table")
    ap.add_argument("--out", type=Path, default=None, help="directory for per-run reports and table.csv")
    args = ap.parse_args(argv)

    if args.hammer_spammer:
        base = ExperimentConfig(dataset="mnist", synthesis="hammer_spammer", R=5, n_correct=3, synth_seed=1)
    else:
        base = ExperimentConfig(dataset="mnist", synthesis="euclidean", R=3, corruption_target=args.corruption)
    singles = tuple(f"single:{r}" for r in range(1, base.resolved().R + 1))

    if args.epsilons:
        eps = [float(v) for v in args.epsilons.split(",")]
        cells = run_sweep(base.replace(corruption_target=None, epsilon=eps[0], output_dir=str(args.out) if args.out else None), "epsilon", eps,
                          methods=singles + FUSION)
        for c in cells:
            print(f'{c["method"]:10s} eps={c["value"]:<6} {c["test_accuracy"]:.4f} {c["error"]}')
        return

    data = prepare_data(base)
    print("epsilon", data.epsilon_used)
    rows = []
    for method in singles + FUSION:
        accs = [run_experiment(base.replace(method=method, model_seed=s), data).test_accuracy
                for s in range(args.seeds)]
        rows.append([method, np.mean(accs), *accs])
        print(f"{method:10s} mean {np.mean(accs):.4f}  " + " ".join(f"{a:.4f}" for a in accs), flush=True)
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        with open(args.out / "table.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["method", "mean", *(f"seed{s}" for s in range(args.seeds))])
            w.writerows(rows)


if __name__ == "__main__":
    main()
