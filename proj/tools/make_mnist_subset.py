#!/usr/bin/env python3
"""Build IDX-format MNIST files from the 5000-sample subset bundled in mlxtend.

The full MNIST archive is not redistributed with this repository. The mlxtend
wheel (BSD-3) ships a 5000-image subset (500 per digit) as CSV; this script
converts it into the standard big-endian IDX pair consumed by the simulator:

    data/mnist5k-images-idx3-ubyte   magic 0x00000803, N x 28 x 28 uint8
    data/mnist5k-labels-idx1-ubyte   magic 0x00000801, N uint8

Usage:
    pip download mlxtend --no-deps -d /tmp/mlx
    python3 tools/make_mnist_subset.py /tmp/mlx/mlxtend-*.whl data/
"""

import gzip
import io
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np

CSV_MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def main(argv):
    if len(argv) != 3:
        print(__doc__, file=sys.stderr)
        return 2
    wheel, out_dir = argv[1], Path(argv[2])
    out_dir.mkdir(parents=True, exist_ok=True)

    raw = gzip.decompress(zipfile.ZipFile(wheel).read(CSV_MEMBER)).decode()
    table = np.loadtxt(io.StringIO(raw), delimiter=",", dtype=np.int64)
    images = table[:, :-1].astype(np.uint8)
    labels = table[:, -1].astype(np.uint8)
    n = images.shape[0]
    assert images.shape[1] == 28 * 28

    with open(out_dir / "mnist5k-images-idx3-ubyte", "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        f.write(images.tobytes())
    with open(out_dir / "mnist5k-labels-idx1-ubyte", "wb") as f:
        f.write(struct.pack(">II", 0x00000801, n))
        f.write(labels.tobytes())

    print(f"wrote {n} samples, label counts {np.bincount(labels).tolist()}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv))
