#!/usr/bin/env python3
"""Convert the 10,000 MNIST digits bundled with the `mnist` npm package (v1.1.0)
into IDX files.

    npm pack mnist && tar xzf mnist-1.1.0.tgz
    python3 scripts/build_mnist_subset.py package/src/digits data/mnist10k

The npm package stores pixel intensities as value/255 rounded to three
decimals; multiplying by 255 and rounding recovers the original bytes exactly.
Examples are written grouped by class (0..9), in the package's order.
"""
import json
import os
import struct
import sys


def main(src, dst):
    images, labels = [], []
    for digit in range(10):
        with open(os.path.join(src, f"{digit}.json")) as fh:
            data = json.load(fh)["data"]
        assert len(data) % 784 == 0
        for start in range(0, len(data), 784):
            px = bytes(int(round(v * 255)) for v in data[start:start + 784])
            images.append(px)
            labels.append(digit)
    os.makedirs(dst, exist_ok=True)
    n = len(images)
    with open(os.path.join(dst, "images-idx3-ubyte"), "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        for px in images:
            fh.write(px)
    with open(os.path.join(dst, "labels-idx1-ubyte"), "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, n))
        fh.write(bytes(labels))
    print(f"wrote {n} examples to {dst}")


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
