#!/usr/bin/env python3
"""Build IDX files from the 10k-digit MNIST subset shipped in the `mnist` npm package.

Use this when the canonical MNIST archives cannot be downloaded. The npm
package stores each digit as 784 floats equal to byte/255 rounded to three
decimals, so round(v * 255) recovers the original byte exactly.

Digits 1-9 are split per digit: the first 80% go to the train files, the
rest to the test files. Every 0 digit goes to the test files, since digit 0
is never used for training.

    python3 scripts/fetch_mnist_subset.py data/mnist
"""

import gzip
import json
import pathlib
import struct
import subprocess
import sys
import tarfile
import tempfile

PACKAGE = "mnist@1.1.0"
TRAIN_FRACTION = 0.8


def write_idx(path, magic, dims, payload):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in dims)
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(header + bytes(payload))


def main():
    out = pathlib.Path(sys.argv[1] if len(sys.argv) > 1 else "data/mnist")
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", PACKAGE, "--silent"], cwd=tmp, check=True,
                       stdout=subprocess.DEVNULL)
        tgz = next(pathlib.Path(tmp).glob("mnist-*.tgz"))
        with tarfile.open(tgz) as tar:
            tar.extractall(tmp)
        digits = {}
        for d in range(10):
            raw = json.loads((pathlib.Path(tmp) / f"package/src/digits/{d}.json").read_text())["data"]
            px = [min(255, max(0, round(v * 255))) for v in raw]
            digits[d] = [px[i:i + 784] for i in range(0, len(px), 784)]

    train, test = [], []
    for d, images in digits.items():
        cut = 0 if d == 0 else int(len(images) * TRAIN_FRACTION)
        train += [(d, im) for im in images[:cut]]
        test += [(d, im) for im in images[cut:]]

    for prefix, rows in (("train", train), ("t10k", test)):
        pixels = [p for _, im in rows for p in im]
        write_idx(out / f"{prefix}-images-idx3-ubyte.gz", 0x803, (len(rows), 28, 28), pixels)
        write_idx(out / f"{prefix}-labels-idx1-ubyte.gz", 0x801, (len(rows),), [d for d, _ in rows])
        print(f"{prefix}: {len(rows)} images -> {out}")


if __name__ == "__main__":
    main()
