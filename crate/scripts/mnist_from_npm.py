#!/usr/bin/env python3
"""Rebuild data/mnist-10k from the 10,000 MNIST digits bundled in the npm `mnist` package.

Usage:
    npm pack mnist && tar xzf mnist-*.tgz
    python3 scripts/mnist_from_npm.py package/src/digits data/mnist-10k

The package stores each digit class as a JSON array of 28x28 floats in [0,1]
rounded to three decimals; pixels are mapped back to bytes with round(v*255).
Samples are interleaved class by class so any prefix is roughly balanced.
"""
import gzip
import json
import struct
import sys
from pathlib import Path


def main(src: Path, dst: Path) -> None:
    per_class = []
    for digit in range(10):
        raw = json.loads((src / f"{digit}.json").read_text())["data"]
        n = len(raw) // 784
        per_class.append([raw[i * 784:(i + 1) * 784] for i in range(n)])

    images, labels = [], []
    depth = max(len(c) for c in per_class)
    for i in range(depth):
        for digit, samples in enumerate(per_class):
            if i < len(samples):
                images.append(bytes(min(255, max(0, round(v * 255))) for v in samples[i]))
                labels.append(digit)

    dst.mkdir(parents=True, exist_ok=True)
    with gzip.GzipFile(dst / "images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 2051, len(images), 28, 28))
        for img in images:
            f.write(img)
    with gzip.GzipFile(dst / "labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 2049, len(labels)))
        f.write(bytes(labels))
    print(f"wrote {len(images)} samples to {dst}")


if __name__ == "__main__":
    main(Path(sys.argv[1]), Path(sys.argv[2]))
