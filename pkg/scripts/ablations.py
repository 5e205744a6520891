"""Ablations: weights-only / confusion-only modes and a lambda sweep on TwoMoon, an M sweep on MNIST.

    python scripts/ablations.py modes
    python scripts/ablations.py lambda --values 0,0.1,0.5,1,2,5
    python scripts/ablations.py M --values 2,5,10,20,40
"""
import argparse

import numpy as np

from samplefusion.fusion import MODES
from samplefusion.harness import ExperimentConfig, prepare_data, run_experiment, run_sweep


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("study", choices=("modes", "lambda", "M"))
    ap.add_argument("--values", default=None)
    ap.add_argument("--seeds", type=int, default=3)
    args = ap.parse_args(argv)

    if args.study == "modes":
        base = ExperimentConfig(dataset="twomoon")
        data = prepare_data(base)
        for mode in MODES:
            accs = [run_experiment(base.replace(mode=mode, model_seed=s), data).test_accuracy
                    for s in range(args.seeds)]
            print(f"{mode:15s} mean {np.mean(accs):.4f}  " + " ".join(f"{a:.4f}" for a in accs))
        return
    if args.study == "lambda":
        base = ExperimentConfig(dataset="twomoon")
        values = [float(v) for v in (args.values or "0,0.1,0.5,1,2,5").split(",")]
    else:
        base = ExperimentConfig(dataset="mnist", corruption_target=0.4)
        values = [int(v) for v in (args.values or "2,5,10,20,40").split(",")]
    for c in run_sweep(base, args.study, values):
        print(f'{args.study}={c["value"]:<6} {c["test_accuracy"]:.4f} {c["error"]}')


if __name__ == "__main__":
    main()
