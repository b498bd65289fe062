#!/usr/bin/env python3
"""Write a 5000-digit MNIST subset as IDX files.

The digits come from the mnist_5k.csv.gz sample bundled in the mlxtend
wheel (500 per class, sorted by label). Each class is split 400/100 into
train/test and both splits are shuffled with a fixed seed.
"""

import argparse
import csv
import gzip
import io
import pathlib
import random
import struct
import subprocess
import sys
import tempfile
import zipfile

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def fetch_wheel(workdir):
    subprocess.run(
        [sys.executable, "-m", "pip", "download", "mlxtend", "--no-deps", "-q", "-d", str(workdir)],
        check=True,
    )
    wheels = sorted(pathlib.Path(workdir).glob("mlxtend-*.whl"))
    if not wheels:
        raise SystemExit("pip download produced no mlxtend wheel")
    return wheels[-1]


def read_rows(wheel):
    with zipfile.ZipFile(wheel) as z:
        raw = gzip.decompress(z.read(MEMBER))
    rows = []
    for rec in csv.reader(io.StringIO(raw.decode())):
        values = [int(float(v)) for v in rec]
        rows.append((bytes(values[:-1]), values[-1]))
    return rows


def write_idx(prefix, rows):
    with open(f"{prefix}-images.idx", "wb") as f:
        f.write(struct.pack(">IIII", 2051, len(rows), 28, 28))
        for pixels, _ in rows:
            f.write(pixels)
    with open(f"{prefix}-labels.idx", "wb") as f:
        f.write(struct.pack(">II", 2049, len(rows)))
        f.write(bytes(label for _, label in rows))


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/mnist", help="output directory")
    parser.add_argument("--wheel", help="local mlxtend wheel (downloaded with pip when omitted)")
    parser.add_argument("--seed", type=int, default=0, help="split and shuffle seed")
    args = parser.parse_args()

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    with tempfile.TemporaryDirectory() as tmp:
        wheel = pathlib.Path(args.wheel) if args.wheel else fetch_wheel(tmp)
        rows = read_rows(wheel)
    if len(rows) != 5000:
        raise SystemExit(f"expected 5000 rows, found {len(rows)}")
    rng = random.Random(args.seed)
    train, test = [], []
    for digit in range(10):
        members = [r for r in rows if r[1] == digit]
        rng.shuffle(members)
        train += members[:400]
        test += members[400:]
    rng.shuffle(train)
    rng.shuffle(test)
    write_idx(out / "train", train)
    write_idx(out / "test", test)
    print(f"wrote {out}/train-*.idx (4000) and {out}/test-*.idx (1000)")


if __name__ == "__main__":
    main()
