"""Convert the 10k-digit MNIST subset shipped in the npm `mnist` package into
gzipped IDX files (8000 train / 1996 test, stratified per class).

usage: npm pack mnist && tar xzf mnist-*.tgz
       python3 scripts/make_mnist10k.py package/src/digits crates/core/data/mnist10k
"""
import gzip
import json
import random
import struct
import sys
from pathlib import Path


def write_idx(path, images, labels_path, labels):
    with gzip.GzipFile(path, "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x803, len(images), 28, 28))
        for img in images:
            f.write(bytes(img))
    with gzip.GzipFile(labels_path, "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x801, len(labels)))
        f.write(bytes(labels))


def main(src, dst):
    src, dst = Path(src), Path(dst)
    rng = random.Random(20200701)
    train, test = [], []
    for digit in range(10):
        data = json.loads((src / f"{digit}.json").read_text())["data"]
        imgs = [
            [min(255, max(0, round(v * 255))) for v in data[i : i + 784]]
            for i in range(0, len(data), 784)
        ]
        rng.shuffle(imgs)
        n_test = len(imgs) // 5
        test += [(img, digit) for img in imgs[:n_test]]
        train += [(img, digit) for img in imgs[n_test:]]
    # per-class floor leaves 8004/1996; trim train to a round 8000
    rng.shuffle(train)
    rng.shuffle(test)
    train = train[:8000]
    dst.mkdir(parents=True, exist_ok=True)
    for name, rows in (("train", train), ("t10k", test)):
        write_idx(
            dst / f"{name}-images-idx3-ubyte.gz",
            [r[0] for r in rows],
            dst / f"{name}-labels-idx1-ubyte.gz",
            [r[1] for r in rows],
        )
        print(name, len(rows))


if __name__ == "__main__":
    main(sys.argv[1], sys.argv[2])
