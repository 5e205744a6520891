"""Build IDX files from the 10,000 MNIST digits bundled in the npm ``mnist`` package.

The official download hosts are not always reachable; the npm registry (or a
mirror of it) usually is.  The package stores each digit class as a JSON list of
pixels in [0, 1] rounded to three decimals, which recovers the original bytes
exactly via round(v * 255).

    python scripts/fetch_mnist.py                 # runs `npm pack mnist@1.1.0`
    python scripts/fetch_mnist.py --source DIR    # an already unpacked package/ dir
"""
import argparse
import json
import subprocess
import sys
import tarfile
import tempfile
from pathlib import Path

import numpy as np

from samplefusion.data import write_idx

ROOT = Path(__file__).resolve().parents[1]


def npm_package_dir(workdir: Path) -> Path:
    subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=workdir, check=True, capture_output=True)
    tgz = next(workdir.glob("mnist-*.tgz"))
    with tarfile.open(tgz) as tar:
        tar.extractall(workdir)
    return workdir / "package"


def convert(package_dir: Path):
    images, labels = [], []
    for digit in range(10):
        with open(package_dir / "src" / "digits" / f"{digit}.json") as fh:
            flat = np.asarray(json.load(fh)["data"], dtype=float)
        px = flat.reshape(-1, 28, 28)
        q = np.rint(px * 255.0)
        if np.abs(q / 255.0 - px).max() > 1e-3:
            raise SystemExit(f"digit {digit}: pixels are not 3-decimal renderings of bytes")
        images.append(q.astype(np.uint8))
        labels.append(np.full(len(px), digit, dtype=np.uint8))
    return np.concatenate(images), np.concatenate(labels)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--source", type=Path, help="unpacked npm package directory")
    ap.add_argument("--out", type=Path, default=ROOT / "data" / "mnist")
    args = ap.parse_args(argv)
    args.out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        src = args.source or npm_package_dir(Path(tmp))
        images, labels = convert(src)
    write_idx(args.out / "mnist10k-images-idx3-ubyte.gz", images)
    write_idx(args.out / "mnist10k-labels-idx1-ubyte.gz", labels)
    print(f"wrote {len(labels)} digits to {args.out}", file=sys.stderr)


if __name__ == "__main__":
    main()
