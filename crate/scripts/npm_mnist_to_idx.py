"""Convert the digits bundled in the `mnist` npm package (v1.1.0) to IDX files.

Usage: python3 scripts/npm_mnist_to_idx.py <unpacked npm package dir> <out dir>

The package stores 10,000 MNIST digits as 784-float arrays rounded to three
decimals, one JSON file per class. Pixels are mapped back to bytes with
round(v * 255) and samples are interleaved with a fixed permutation.
"""
import gzip
import json
import os
import struct
import sys

import numpy as np


def main(pkg, out):
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(pkg, "src", "digits", f"{digit}.json")) as fh:
            raw = np.asarray(json.load(fh)["data"], dtype=np.float64)
        pix = np.clip(np.round(raw * 255.0), 0, 255).astype(np.uint8).reshape(-1, 784)
        images.append(pix)
        labels.append(np.full(len(pix), digit, dtype=np.uint8))
    images = np.concatenate(images)
    labels = np.concatenate(labels)
    order = np.random.default_rng(20171212).permutation(len(labels))
    images, labels = images[order], labels[order]
    n = len(labels)
    os.makedirs(out, exist_ok=True)
    with gzip.GzipFile(os.path.join(out, "images-idx3-ubyte.gz"), "wb", mtime=0) as fh:
        fh.write(struct.pack(">IIII", 0x803, n, 28, 28))
        fh.write(images.tobytes())
    with gzip.GzipFile(os.path.join(out, "labels-idx1-ubyte.gz"), "wb", mtime=0) as fh:
        fh.write(struct.pack(">II", 0x801, n))
        fh.write(labels.tobytes())
    print(n, np.bincount(labels))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
