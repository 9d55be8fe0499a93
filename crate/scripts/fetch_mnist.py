#!/usr/bin/env python3
"""Build IDX files under data/mnist/ from the 10,000 MNIST digits bundled in
the `mnist` npm package (https://github.com/cazala/mnist).

Each class is split 60/40 into `train-*` and `t10k-*` files so that train and
test grids never share a source digit. Pass a directory holding the official
MNIST IDX files through FICBL_MNIST_DIR to use the full dataset instead.
"""
import gzip
import json
import os
import struct
import subprocess
import sys
import tarfile
import tempfile

import numpy as np

TRAIN_FRACTION = 0.6


def write_images(path, images):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        f.write(np.asarray(images, dtype=np.uint8).tobytes())


def write_labels(path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(np.asarray(labels, dtype=np.uint8).tobytes())


def main():
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(
        os.path.dirname(__file__), "..", "data", "mnist")
    os.makedirs(out, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        subprocess.run(["npm", "pack", "mnist@1.1.0"], cwd=tmp, check=True,
                       stdout=subprocess.DEVNULL)
        with tarfile.open(os.path.join(tmp, "mnist-1.1.0.tgz")) as tar:
            tar.extractall(tmp)
        splits = {"train": ([], []), "t10k": ([], [])}
        for digit in range(10):
            with open(os.path.join(tmp, "package", "src", "digits", f"{digit}.json")) as f:
                data = np.asarray(json.load(f)["data"], dtype=np.float64)
            images = np.rint(data.reshape(-1, 784) * 255.0).clip(0, 255).astype(np.uint8)
            cut = int(len(images) * TRAIN_FRACTION)
            for name, part in (("train", images[:cut]), ("t10k", images[cut:])):
                splits[name][0].extend(part)
                splits[name][1].extend([digit] * len(part))
    rng = np.random.RandomState(0)
    for name, (images, labels) in splits.items():
        order = rng.permutation(len(labels))
        write_images(os.path.join(out, f"{name}-images-idx3-ubyte.gz"),
                     [images[i] for i in order])
        write_labels(os.path.join(out, f"{name}-labels-idx1-ubyte.gz"),
                     [labels[i] for i in order])
        print(f"{name}: {len(labels)} digits")


if __name__ == "__main__":
    main()
