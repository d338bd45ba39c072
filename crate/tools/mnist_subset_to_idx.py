"""Convert the 10k-digit MNIST subset shipped in the `mnist` npm package
(src/digits/<d>.json) into gzip-compressed IDX files.

Usage: python3 tools/mnist_subset_to_idx.py <package/src/digits> <out_dir>

Each digit's samples are split 80/20 in file order into train/test, then
interleaved digit by digit so both splits are class balanced along the file.
"""
import gzip
import json
import struct
import sys
from pathlib import Path

PIXELS = 784


def load(digits_dir):
    per_digit = []
    for d in range(10):
        data = json.loads((Path(digits_dir) / f"{d}.json").read_text())["data"]
        assert len(data) % PIXELS == 0
        rows = [data[i:i + PIXELS] for i in range(0, len(data), PIXELS)]
        per_digit.append([bytes(round(v * 255) for v in row) for row in rows])
    return per_digit


def interleave(groups):
    out = []
    longest = max(len(g) for g in groups)
    for i in range(longest):
        for label, g in enumerate(groups):
            if i < len(g):
                out.append((label, g[i]))
    return out


def write(out_dir, prefix, rows):
    with gzip.GzipFile(out_dir / f"{prefix}-images-idx3-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">IIII", 0x00000803, len(rows), 28, 28))
        for _, img in rows:
            f.write(img)
    with gzip.GzipFile(out_dir / f"{prefix}-labels-idx1-ubyte.gz", "wb", mtime=0) as f:
        f.write(struct.pack(">II", 0x00000801, len(rows)))
        f.write(bytes(label for label, _ in rows))


def main():
    digits_dir, out_dir = sys.argv[1], Path(sys.argv[2])
    out_dir.mkdir(parents=True, exist_ok=True)
    per_digit = load(digits_dir)
    train = [g[: (len(g) * 4) // 5] for g in per_digit]
    test = [g[(len(g) * 4) // 5:] for g in per_digit]
    write(out_dir, "train", interleave(train))
    write(out_dir, "t10k", interleave(test))


if __name__ == "__main__":
    main()
