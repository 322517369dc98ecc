"""Write the 5,000-image MNIST subset bundled with mlxtend as gzipped IDX files.

The sandbox that builds this repository has no route to the MNIST mirrors, but
the mlxtend wheel ships ``mnist_5k.csv.gz`` (5,000 training images with labels).
This script converts that CSV into the canonical big-endian IDX containers so
the rest of the toolkit reads it exactly like the original distribution.

Usage::

    pip download --no-deps -d /tmp/wheels mlxtend
    python scripts/make_mnist_subset.py /tmp/wheels/mlxtend-*.whl data/
"""
import gzip
import io
import struct
import sys
import zipfile
from pathlib import Path

import numpy as np

MEMBER = "mlxtend/data/data/mnist_5k.csv.gz"


def load_csv(wheel):
    with zipfile.ZipFile(wheel) as zf:
        raw = gzip.decompress(zf.read(MEMBER))
    table = np.loadtxt(io.BytesIO(raw), delimiter=",", dtype=np.int64)
    images = table[:, :-1].astype(np.uint8).reshape(-1, 28, 28)
    labels = table[:, -1].astype(np.uint8)
    return images, labels


def write_idx(path, array, magic):
    header = struct.pack(">I", magic) + b"".join(struct.pack(">I", d) for d in array.shape)
    # mtime=0 keeps the gzip bytes reproducible
    with open(path, "wb") as fh, gzip.GzipFile(fileobj=fh, mode="wb", mtime=0) as gz:
        gz.write(header + array.tobytes())


def main(argv):
    wheel, out = Path(argv[1]), Path(argv[2])
    out.mkdir(parents=True, exist_ok=True)
    images, labels = load_csv(wheel)
    write_idx(out / "mnist5k-images-idx3-ubyte.gz", images, 0x00000803)
    write_idx(out / "mnist5k-labels-idx1-ubyte.gz", labels, 0x00000801)
    print(f"wrote {len(images)} images to {out}")


if __name__ == "__main__":
    main(sys.argv)
