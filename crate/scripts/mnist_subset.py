"""Write a digits-0/1 MNIST subset in IDX format.

Source: the `mnist` npm package (src/digits/<d>.json, about a thousand images per digit,
grey values scaled to [0, 1]). Fetch it with `npm pack mnist` and unpack.

    python3 scripts/mnist_subset.py path/to/package data/mnist01
"""
import json
import struct
import sys
from pathlib import Path

TRAIN_PER_DIGIT = 500


def load(pkg, digit):
    flat = json.loads((Path(pkg) / "src" / "digits" / f"{digit}.json").read_text())["data"]
    n = len(flat) // 784
    return [[round(v * 255) for v in flat[k * 784:(k + 1) * 784]] for k in range(n)]


def write_images(path, images):
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))


def write_labels(path, labels):
    with open(path, "wb") as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main():
    pkg, out = sys.argv[1], Path(sys.argv[2])
    out.mkdir(parents=True, exist_ok=True)
    zeros, ones = load(pkg, 0), load(pkg, 1)
    train, test = [], []
    for k in range(max(len(zeros), len(ones))):
        for label, imgs in ((0, zeros), (1, ones)):
            if k < len(imgs):
                (train if k < TRAIN_PER_DIGIT else test).append((imgs[k], label))
    for name, rows in (("train", train), ("test", test)):
        write_images(out / f"{name}-images-idx3-ubyte", [r[0] for r in rows])
        write_labels(out / f"{name}-labels-idx1-ubyte", [r[1] for r in rows])
        print(name, len(rows))


if __name__ == "__main__":
    main()
