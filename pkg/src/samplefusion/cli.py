"""Command line: ``samplefusion run --config C`` and ``samplefusion sweep --config C --axis A --values V``.

Environment overrides: SAMPLEFUSION_OUTPUT_DIR replaces the config's output
directory, SAMPLEFUSION_THREADS caps the BLAS thread pool.  On failure the last
stderr line is ``error: {"type": ..., "message": ...}`` and the exit code is nonzero.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from threadpoolctl import threadpool_limits

from .errors import ConfigError, SampleFusionError
from .harness import ExperimentConfig, SWEEP_AXES, run_experiment, run_sweep

ENV_OUTPUT_DIR = "SAMPLEFUSION_OUTPUT_DIR"
ENV_THREADS = "SAMPLEFUSION_THREADS"

EXIT_CONFIG = 2
EXIT_RUNTIME = 3
EXIT_IO = 4


def _parse_values(text: str) -> list:
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            out.append(int(tok))
        except ValueError:
            try:
                out.append(float(tok))
            except ValueError:
                raise ConfigError(f"sweep value {tok!r} is not a number") from None
    if not out:
        raise ConfigError("--values is empty")
    return out


def load_config(path) -> ExperimentConfig:
    try:
        cfg = ExperimentConfig.from_file(path)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: not valid JSON ({exc})") from None
    env_out = os.environ.get(ENV_OUTPUT_DIR)
    if env_out:
        cfg = cfg.replace(output_dir=env_out)
    return cfg


def _threads() -> int | None:
    raw = os.environ.get(ENV_THREADS)
    if not raw:
        return None
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{ENV_THREADS}={raw!r} is not an integer") from None
    if n < 1:
        raise ConfigError(f"{ENV_THREADS} must be >= 1")
    return n


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="samplefusion", description="Sample-wise label fusion experiments.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="train and evaluate one configuration")
    run.add_argument("--config", required=True)
    sw = sub.add_parser("sweep", help="one run per axis value (and method)")
    sw.add_argument("--config", required=True)
    sw.add_argument("--axis", required=True, choices=sorted(SWEEP_AXES))
    sw.add_argument("--values", required=True, help="comma separated, e.g. 0.1,0.5,1.0")
    sw.add_argument("--methods", help="comma separated; defaults to the config's method")
    sw.add_argument("--jobs", type=int, default=1)
    sw.add_argument("--out", help="CSV table path (default: <output_dir>/sweep_<axis>.csv)")
    return ap


def _error_line(exc: BaseException) -> str:
    return "error: " + json.dumps({"type": type(exc).__name__, "message": str(exc)})


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args.config)
        with threadpool_limits(limits=_threads()):
            if args.command == "run":
                rep = run_experiment(cfg)
                print(json.dumps({"method": rep.method, "test_accuracy": rep.test_accuracy,
                                  "selected_epoch": rep.selected_epoch}))
            else:
                methods = args.methods.split(",") if args.methods else None
                cells = run_sweep(cfg, args.axis, _parse_values(args.values), methods, args.out, args.jobs)
                for c in cells:
                    print(json.dumps(c))
                if all(c["error"] for c in cells):
                    raise SampleFusionError("every sweep cell failed")
    except (ConfigError, SampleFusionError) as exc:
        print(_error_line(exc), file=sys.stderr)
        return EXIT_CONFIG if isinstance(exc, ConfigError) else EXIT_RUNTIME
    except OSError as exc:
        print(_error_line(exc), file=sys.stderr)
        return EXIT_IO
    return 0


if __name__ == "__main__":
    sys.exit(main())
