"""Artifact writers: canonical JSON, CSV tables, curve dumps, PGM tile grids.

Everything written here is a pure function of its inputs (no timestamps,
sorted keys, round-trip float formatting) so identical runs give identical
bytes.
"""
import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from .curves import write_curve_csv


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def canonical_json(obj):
    return json.dumps(_clean(obj), sort_keys=True, indent=2, allow_nan=False) + "\n"


def config_hash(values):
    return hashlib.sha256(json.dumps(_clean(values), sort_keys=True).encode()).hexdigest()


def write_json(path, obj):
    Path(path).write_text(canonical_json(obj))


def read_json(path):
    return json.loads(Path(path).read_text())


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def write_curve(path, curve):
    write_curve_csv(path, curve)


def tile_grid(rows, tile, gap=1, tiles=None):
    """Stack point sequences as square tiles, one row of tiles per sequence.

    ``rows`` holds arrays of flattened tiles (values in [0, 1]). Returns an
    8-bit image array.
    """
    if tiles is None:
        tiles = max(len(r) for r in rows)
    h = len(rows) * (tile + gap) + gap
    w = tiles * (tile + gap) + gap
    img = np.full((h, w), 128, dtype=np.uint8)
    for i, seq in enumerate(rows):
        for j, vec in enumerate(seq[:tiles]):
            patch = np.clip(np.asarray(vec).reshape(tile, tile), 0.0, 1.0)
            r0 = gap + i * (tile + gap)
            c0 = gap + j * (tile + gap)
            img[r0:r0 + tile, c0:c0 + tile] = np.rint(patch * 255).astype(np.uint8)
    return img


def write_pgm(path, img):
    img = np.asarray(img, dtype=np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    Path(path).write_bytes(header + img.tobytes())


def read_pgm(path):
    raw = Path(path).read_bytes()
    parts = raw.split(b"\n", 3)
    if parts[0] != b"P5":
        raise ValueError("not a binary graymap")
    w, h = (int(v) for v in parts[1].split())
    return np.frombuffer(parts[3], dtype=np.uint8, count=w * h).reshape(h, w)


def curve_tiles(curve, count):
    """``count`` points evenly spaced in parameter along a curve."""
    targets = np.linspace(curve.params[0], curve.params[-1], count)
    idx = np.clip(np.searchsorted(curve.params, targets), 0, len(curve.params) - 1)
    return curve.points[idx]
