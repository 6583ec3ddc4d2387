#!/usr/bin/env python3
"""Convert the digits bundled with the `mnist` npm package into IDX files.

The npm package (https://www.npmjs.com/package/mnist) ships 10,000 MNIST
digits as per-class JSON arrays of 784 intensities in [0, 1] rounded to three
decimals. This script quantizes them back to bytes and writes a train/test
split in the standard big-endian IDX layout so `load_idx` can read them:

    python3 tools/mnist_npm_to_idx.py path/to/package data/mnist-npm

Get the package with `npm pack mnist && tar xzf mnist-*.tgz`.
"""

import argparse
import json
import random
import struct
from pathlib import Path


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x00000803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x00000801, len(labels)))
        f.write(bytes(labels))


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("package", type=Path, help="unpacked npm package dir")
    parser.add_argument("out", type=Path, help="output directory")
    parser.add_argument("--test", type=int, default=2000, help="test examples")
    parser.add_argument("--seed", type=int, default=20240101)
    args = parser.parse_args()

    samples = []
    for digit in range(10):
        data = json.loads((args.package / "src" / "digits" / f"{digit}.json").read_text())["data"]
        assert len(data) % 784 == 0
        for k in range(len(data) // 784):
            pixels = data[k * 784:(k + 1) * 784]
            samples.append(([min(255, max(0, round(v * 255))) for v in pixels], digit))

    random.Random(args.seed).shuffle(samples)
    test, train = samples[:args.test], samples[args.test:]

    args.out.mkdir(parents=True, exist_ok=True)
    write_images(args.out / "train-images-idx3-ubyte", [s[0] for s in train])
    write_labels(args.out / "train-labels-idx1-ubyte", [s[1] for s in train])
    write_images(args.out / "t10k-images-idx3-ubyte", [s[0] for s in test])
    write_labels(args.out / "t10k-labels-idx1-ubyte", [s[1] for s in test])
    print(f"wrote {len(train)} train / {len(test)} test digits to {args.out}")


if __name__ == "__main__":
    main()
