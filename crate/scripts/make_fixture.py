"""Generate the 200-image synthetic MNIST-format fixture used by the CLI tests.

Usage: python3 scripts/make_fixture.py <out dir>

Each class is a fixed stroke template (a bar at a class-specific angle plus a
class-specific blob) with jitter and pixel noise, 20 images per class.
"""
import os
import struct
import sys

import numpy as np


def template(cls, rng):
    img = np.zeros((28, 28))
    yy, xx = np.mgrid[0:28, 0:28]
    angle = np.pi * cls / 10.0
    cx, cy = 14 + rng.normal(0, 1), 14 + rng.normal(0, 1)
    dist = np.abs((xx - cx) * np.sin(angle) - (yy - cy) * np.cos(angle))
    along = np.abs((xx - cx) * np.cos(angle) + (yy - cy) * np.sin(angle))
    img += np.exp(-dist**2 / 2.0) * (along < 10)
    bx = 6 + 16 * (cls % 3) / 2 + rng.normal(0, 0.7)
    by = 6 + 16 * (cls // 3) / 3 + rng.normal(0, 0.7)
    img += np.exp(-((xx - bx) ** 2 + (yy - by) ** 2) / 6.0)
    img += rng.uniform(0, 0.1, size=img.shape)
    return np.clip(img, 0, 1)


def main(out):
    rng = np.random.default_rng(200)
    labels = np.repeat(np.arange(10, dtype=np.uint8), 20)
    rng.shuffle(labels)
    images = np.stack([template(int(c), rng) for c in labels])
    pix = np.round(images * 255).astype(np.uint8)
    os.makedirs(out, exist_ok=True)
    with open(os.path.join(out, "images-idx3-ubyte"), "wb") as fh:
        fh.write(struct.pack(">IIII", 0x803, len(labels), 28, 28))
        fh.write(pix.tobytes())
    with open(os.path.join(out, "labels-idx1-ubyte"), "wb") as fh:
        fh.write(struct.pack(">II", 0x801, len(labels)))
        fh.write(labels.tobytes())


if __name__ == "__main__":
    main(sys.argv[1])
