#!/usr/bin/env python3
"""Write a small CIFAR-10 subset as PNG files plus manifest.csv and prompts.txt.

Reads the "python version" batches already on disk (for example
cifar-10-batches-py/test_batch); nothing is downloaded.

    python3 scripts/prepare_cifar_subset.py cifar-10-batches-py/test_batch data/cifar100 --count 100

The output directory can be used as [dataset] manifest in any config.
Images are kept at 32x32; set [backend] request_image_size for the model.
"""

import argparse
import csv
import pickle
import random
import struct
import zlib
from pathlib import Path

CLASSES = [
    "airplane", "automobile", "bird", "cat", "deer",
    "dog", "frog", "horse", "ship", "truck",
]


def png_bytes(rgb: bytes, width: int, height: int) -> bytes:
    def chunk(tag: bytes, data: bytes) -> bytes:
        body = tag + data
        return struct.pack(">I", len(data)) + body + struct.pack(">I", zlib.crc32(body) & 0xFFFFFFFF)

    rows = b"".join(b"\x00" + rgb[y * width * 3:(y + 1) * width * 3] for y in range(height))
    header = struct.pack(">IIBBBBB", width, height, 8, 2, 0, 0, 0)
    return b"\x89PNG\r\n\x1a\n" + chunk(b"IHDR", header) + chunk(b"IDAT", zlib.compress(rows, 9)) + chunk(b"IEND", b"")


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("batch", type=Path, help="CIFAR-10 python batch file")
    ap.add_argument("out", type=Path)
    ap.add_argument("--count", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--template", default="a photo of a {label}")
    args = ap.parse_args()

    with args.batch.open("rb") as f:
        batch = pickle.load(f, encoding="bytes")
    data, labels = batch[b"data"], batch[b"labels"]
    order = list(range(len(labels)))
    random.Random(args.seed).shuffle(order)

    images = args.out / "images"
    images.mkdir(parents=True, exist_ok=True)
    with (args.out / "manifest.csv").open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "path", "label"])
        for i in order[: args.count]:
            planes = bytes(data[i])
            # stored as 1024 R, 1024 G, 1024 B
            rgb = bytes(planes[c * 1024 + p] for p in range(1024) for c in range(3))
            ident = f"cifar{i:05d}"
            rel = f"images/{ident}.png"
            (args.out / rel).write_bytes(png_bytes(rgb, 32, 32))
            w.writerow([ident, rel, labels[i]])
    (args.out / "prompts.txt").write_text("".join(args.template.format(label=c) + "\n" for c in CLASSES))
    print(args.out / "manifest.csv")


if __name__ == "__main__":
    main()
