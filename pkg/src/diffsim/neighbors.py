"""Exact nearest-neighbor queries, Data/Coordinate Spheres, and subsampling."""
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .density import KernelContext

# Trees lose to a blocked scan once the dimension gets this high.
TREE_MAX_DIM = 30
_SCAN_BLOCK = 8192


class Dataset:
    """Immutable (N, n) point collection with an exact neighbor index."""

    def __init__(self, points, meta=None):
        pts = np.array(points, dtype=np.float64, order="C", copy=True)
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("points must be a nonempty (N, n) array")
        if np.isnan(pts).any():
            raise ValueError("dataset contains NaN")
        pts.setflags(write=False)
        self.points = pts
        self.meta = dict(meta or {})
        self.bounds = np.stack([pts.min(axis=0), pts.max(axis=0)])
        self._tree = cKDTree(pts) if pts.shape[1] < TREE_MAX_DIM else None

    def __len__(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    member_ids: np.ndarray
    radius: float

    def __len__(self):
        return len(self.member_ids)


def _distances(points, x, ids=None):
    # sqrt of a plain sum of squared differences: identical inputs give identical outputs
    sub = points if ids is None else points[ids]
    out = np.empty(sub.shape[0])
    for lo in range(0, sub.shape[0], _SCAN_BLOCK):
        d = sub[lo:lo + _SCAN_BLOCK] - x
        out[lo:lo + _SCAN_BLOCK] = np.sqrt(np.einsum("ij,ij->i", d, d))
    return out


def _select(ids, dist, k):
    order = np.lexsort((ids, dist))[:k]
    return ids[order], dist[order]


def nearest_arrays(ds, x, k):
    """Ids and distances of the k nearest points, ascending, ties to the lower id."""
    N = len(ds)
    if not 1 <= k <= N:
        raise ValueError(f"k must lie in [1, {N}], got {k}")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (ds.dim,):
        raise ValueError("dimension mismatch")
    if ds._tree is not None:
        dk = ds._tree.query(x, k=[k])[0][0]
        cand = np.array(ds._tree.query_ball_point(x, dk * (1 + 1e-9) + 1e-300), dtype=np.int64)
        return _select(cand, _distances(ds.points, x, cand), k)
    dist = _distances(ds.points, x)
    if k < N:
        kth = np.partition(dist, k - 1)[k - 1]
        cand = np.flatnonzero(dist <= kth)
    else:
        cand = np.arange(N)
    return _select(cand, dist[cand], k)


def nearest(ds, x, k):
    ids, dist = nearest_arrays(ds, x, k)
    return [(int(i), float(d)) for i, d in zip(ids, dist)]


def data_sphere(ds, center, k):
    ids, dist = nearest_arrays(ds, center, k)
    return Sphere(center=np.array(center, dtype=np.float64), member_ids=ids, radius=float(dist[-1]))


def draw_sample_ids(sphere, m, count=1, seed=0):
    """Ids of ``count`` independent uniform subsamples of ``m`` sphere members.

    Each subsample gets its own child seed; ids come back sorted so
    downstream sums do not depend on the draw order.
    """
    members = np.asarray(sphere.member_ids)
    if not 1 <= m <= len(members):
        raise ValueError(f"cannot draw {m} points from a sphere of {len(members)}")
    out = []
    for child in np.random.SeedSequence(seed).spawn(count):
        rng = np.random.default_rng(child)
        out.append(np.sort(rng.choice(members, size=m, replace=False)))
    return out


def draw_samples(sphere, ds, m, count=1, seed=0):
    """Point arrays for :func:`draw_sample_ids`."""
    return [ds.points[ids] for ids in draw_sample_ids(sphere, m, count, seed)]


class NearestSampler:
    """Resampling rule for gradient ascent: the m nearest points around x."""

    def __init__(self, ds, m, beta):
        self.ds = ds
        self.m = min(m, len(ds))
        self.beta = beta

    def __call__(self, x):
        ids, _ = nearest_arrays(self.ds, x, self.m)
        return frozenset(ids.tolist()), KernelContext(self.beta, self.ds.points[np.sort(ids)])
