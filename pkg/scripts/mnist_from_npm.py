"""Convert the digit JSON files shipped by the npm ``mnist`` package to IDX.

The package stores roughly 1,000 genuine MNIST digits per class as
``{"data": [...]}`` with 784 pixel values already divided by 255. This script
rescales them to bytes and writes the standard four IDX files, holding out the
last ``--test-per-class`` digits of every class as the test split.

    npm pack mnist && tar xzf mnist-*.tgz
    python scripts/mnist_from_npm.py package/src/digits data/mnist
"""
import argparse
import json
from pathlib import Path

import numpy as np

from fedcl.data import write_idx


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("digits_dir", help="directory holding 0.json .. 9.json")
    ap.add_argument("out_dir")
    ap.add_argument("--test-per-class", type=int, default=100)
    args = ap.parse_args(argv)

    train_x, train_y, test_x, test_y = [], [], [], []
    for digit in range(10):
        flat = np.asarray(json.loads((Path(args.digits_dir) / f"{digit}.json").read_text())["data"])
        images = np.rint(flat.reshape(-1, 28, 28) * 255).clip(0, 255).astype(np.uint8)
        cut = len(images) - args.test_per_class
        train_x.append(images[:cut])
        test_x.append(images[cut:])
        train_y.append(np.full(cut, digit, dtype=np.uint8))
        test_y.append(np.full(len(images) - cut, digit, dtype=np.uint8))

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_idx(out / "train-images-idx3-ubyte", np.concatenate(train_x))
    write_idx(out / "train-labels-idx1-ubyte", np.concatenate(train_y))
    write_idx(out / "t10k-images-idx3-ubyte", np.concatenate(test_x))
    write_idx(out / "t10k-labels-idx1-ubyte", np.concatenate(test_y))
    print(f"wrote {sum(map(len, train_y))} train and {sum(map(len, test_y))} test digits to {out}")


if __name__ == "__main__":
    main()
