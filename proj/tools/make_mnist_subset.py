#!/usr/bin/env python3
"""Write the 5,000-image MNIST subset shipped with mlxtend as IDX files.

Usage: make_mnist_subset.py <mnist_5k.csv.gz> <out_dir>

The CSV holds 784 pixel values (0-255) followed by the digit label per line.
"""
import gzip
import struct
import sys
from pathlib import Path


def main() -> None:
    src, out = Path(sys.argv[1]), Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    pixels, labels = bytearray(), bytearray()
    with gzip.open(src, "rt") as fh:
        for line in fh:
            values = [int(float(v)) for v in line.strip().split(",")]
            pixels.extend(values[:784])
            labels.append(values[784])
    n = len(labels)
    with open(out / "images-idx3-ubyte", "wb") as fh:
        fh.write(struct.pack(">IIII", 0x00000803, n, 28, 28))
        fh.write(pixels)
    with open(out / "labels-idx1-ubyte", "wb") as fh:
        fh.write(struct.pack(">II", 0x00000801, n))
        fh.write(labels)
    print(f"wrote {n} images to {out}")


if __name__ == "__main__":
    main()
