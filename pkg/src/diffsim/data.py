"""Data ingestion and synthesis.

MNIST IDX parsing and patch extraction, plus synthetic potentials whose
gradients and Hessians are known in closed form. A synthetic potential is a
Gaussian in coordinates u = T(y), where T is a triangular polynomial map with
unit Jacobian determinant:

    u_0 = y_0,  u_1 = y_1 - c_1 y_0^2,  u_i = y_i - c_i y_0 y_(i-1)  (i >= 2)

and y = R^T (x - t) places the component in the ambient space. The stationary
density is exp(2U) = N(u; 0, Sigma), so 2U = -u^T Sigma^-1 u / 2 + const.
"""
import gzip
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Tuple

import numpy as np

from .errors import BadMagic, TruncatedFile
from .neighbors import Dataset

_IDX_TYPES = {
    0x08: np.dtype(">u1"),
    0x09: np.dtype(">i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}


def _read_bytes(source):
    if hasattr(source, "read"):
        raw = source.read()
    else:
        raw = Path(source).read_bytes()
    if raw[:2] == b"\x1f\x8b":
        raw = gzip.decompress(raw)
    return raw


def parse_idx(source):
    """Parse an IDX container (optionally gzipped) into a NumPy array.

    Magic 0x00000803 yields (count, rows, cols) images, 0x00000801 a label
    vector; other standard type codes are accepted as well.
    """
    raw = _read_bytes(source)
    if len(raw) < 4:
        raise TruncatedFile(f"IDX header needs 4 bytes, got {len(raw)}")
    zero, code, ndim = struct.unpack(">HBB", raw[:4])
    if zero != 0 or code not in _IDX_TYPES or ndim == 0:
        raise BadMagic(f"bad IDX magic {raw[:4].hex()}")
    head = 4 + 4 * ndim
    if len(raw) < head:
        raise TruncatedFile("IDX dimension block is incomplete")
    dims = struct.unpack(f">{ndim}I", raw[4:head])
    dtype = _IDX_TYPES[code]
    need = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize
    if len(raw) - head < need:
        raise TruncatedFile(f"IDX payload has {len(raw) - head} bytes, expected {need}")
    arr = np.frombuffer(raw, dtype=dtype, count=need // dtype.itemsize, offset=head)
    return arr.reshape(dims).astype(dtype.newbyteorder("="))


def write_idx(path, array):
    """Write an array as an IDX container (ubyte, int32 or float64)."""
    array = np.asarray(array)
    codes = {np.dtype(np.uint8): 0x08, np.dtype(np.int32): 0x0C, np.dtype(np.float64): 0x0E}
    code = codes[array.dtype]
    header = struct.pack(">HBB", 0, code, array.ndim) + struct.pack(f">{array.ndim}I", *array.shape)
    payload = array.astype(_IDX_TYPES[code]).tobytes()
    Path(path).write_bytes(header + payload)


@dataclass(frozen=True)
class PatchConfig:
    patch_size: int = 7
    scans_per_image: int = 10
    scale: float = 255.0
    seed: int = 0
    dedupe: bool = False


def extract_patches(images, cfg=PatchConfig()):
    """Random square patches, scaled to [0, 1] and flattened.

    Offsets are uniform over all positions where the patch fits.
    """
    images = np.asarray(images)
    if images.ndim != 3 or images.shape[0] == 0:
        raise ValueError("images must be a nonempty (count, rows, cols) array")
    count, rows, cols = images.shape
    p = cfg.patch_size
    if p > rows or p > cols:
        raise ValueError("patch does not fit inside the image")
    rng = np.random.default_rng(cfg.seed)
    r0 = rng.integers(0, rows - p + 1, size=(count, cfg.scans_per_image))
    c0 = rng.integers(0, cols - p + 1, size=(count, cfg.scans_per_image))
    offs = np.arange(p)
    img = np.repeat(np.arange(count), cfg.scans_per_image)
    rr = r0.reshape(-1)[:, None, None] + offs[None, :, None]
    cc = c0.reshape(-1)[:, None, None] + offs[None, None, :]
    patches = images[img[:, None, None], rr, cc].reshape(-1, p * p).astype(np.float64) / cfg.scale
    if cfg.dedupe:
        _, first = np.unique(patches, axis=0, return_index=True)
        patches = patches[np.sort(first)]
    meta = {"source": "patches", "patch_size": p, "scans_per_image": cfg.scans_per_image,
            "seed": cfg.seed, "images": int(count)}
    return Dataset(patches, meta=meta)


def write_cache(prefix, ds, provenance=None):
    """Flat little-endian float64 payload plus a JSON sidecar."""
    prefix = Path(prefix)
    prefix.with_suffix(".f64").write_bytes(ds.points.astype("<f8").tobytes())
    meta = dict(ds.meta)
    meta.update(count=len(ds), dim=ds.dim)
    if provenance:
        meta["provenance"] = provenance
    prefix.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return meta


def read_cache(prefix):
    prefix = Path(prefix)
    meta = json.loads(prefix.with_suffix(".json").read_text())
    raw = np.frombuffer(prefix.with_suffix(".f64").read_bytes(), dtype="<f8")
    if raw.size != meta["count"] * meta["dim"]:
        raise TruncatedFile("dataset cache size does not match its sidecar")
    return Dataset(raw.reshape(meta["count"], meta["dim"]), meta=meta)


# ---------------------------------------------------------------------------
# synthetic potentials
# ---------------------------------------------------------------------------


def transform(y, coeffs):
    y = np.asarray(y, dtype=np.float64)
    u = y.copy()
    if coeffs.size == 0:
        return u
    u[..., 1] = y[..., 1] - coeffs[0] * y[..., 0] ** 2
    for i in range(2, y.shape[-1]):
        u[..., i] = y[..., i] - coeffs[i - 1] * y[..., 0] * y[..., i - 1]
    return u


def inverse_transform(u, coeffs):
    u = np.asarray(u, dtype=np.float64)
    y = u.copy()
    if coeffs.size == 0:
        return y
    y[..., 1] = u[..., 1] + coeffs[0] * y[..., 0] ** 2
    for i in range(2, u.shape[-1]):
        y[..., i] = u[..., i] + coeffs[i - 1] * y[..., 0] * y[..., i - 1]
    return y


def transform_jacobian(y, coeffs):
    n = y.shape[0]
    J = np.eye(n)
    if coeffs.size == 0:
        return J
    J[1, 0] = -2.0 * coeffs[0] * y[0]
    for i in range(2, n):
        J[i, 0] = -coeffs[i - 1] * y[i - 1]
        J[i, i - 1] = -coeffs[i - 1] * y[0]
    return J


@dataclass(frozen=True)
class Component:
    precision: np.ndarray
    coeffs: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray
    log_norm: float

    @classmethod
    def build(cls, cov, coeffs=None, rotation=None, translation=None):
        cov = np.atleast_2d(np.asarray(cov, dtype=np.float64))
        n = cov.shape[0]
        coeffs = np.zeros(n - 1) if coeffs is None else np.asarray(coeffs, dtype=np.float64)
        if coeffs.shape != (n - 1,):
            raise ValueError("need one transform coefficient per axis after the first")
        rotation = np.eye(n) if rotation is None else np.asarray(rotation, dtype=np.float64)
        translation = np.zeros(n) if translation is None else np.asarray(translation, dtype=np.float64)
        sign, logdet = np.linalg.slogdet(2 * np.pi * cov)
        if sign <= 0:
            raise ValueError("covariance must be positive definite")
        return cls(np.linalg.inv(cov), coeffs, rotation, translation, -0.5 * logdet)

    @property
    def cov(self):
        return np.linalg.inv(self.precision)

    def local(self, x):
        return (np.asarray(x) - self.translation) @ self.rotation

    def log_density(self, x):
        u = transform(self.local(x), self.coeffs)
        return self.log_norm - 0.5 * np.einsum("...i,ij,...j->...", u, self.precision, u)

    def log_and_gradient(self, x):
        y = self.local(x)
        u = transform(y, self.coeffs)
        Au = self.precision @ u
        grad_y = -transform_jacobian(y, self.coeffs).T @ Au
        return self.log_norm - 0.5 * u @ Au, self.rotation @ grad_y

    def derivatives(self, x):
        """log density, its gradient and Hessian at a single point."""
        y = self.local(x)
        u = transform(y, self.coeffs)
        J = transform_jacobian(y, self.coeffs)
        Au = self.precision @ u
        grad_y = -J.T @ Au
        hess_y = -J.T @ self.precision @ J
        if self.coeffs.size:
            c = self.coeffs
            hess_y[0, 0] += 2.0 * c[0] * Au[1]
            for i in range(2, y.shape[0]):
                hess_y[0, i - 1] += c[i - 1] * Au[i]
                hess_y[i - 1, 0] += c[i - 1] * Au[i]
        R = self.rotation
        ll = self.log_norm - 0.5 * u @ Au
        return ll, R @ grad_y, R @ hess_y @ R.T

    def sample(self, count, rng):
        n = self.precision.shape[0]
        L = np.linalg.cholesky(self.cov)
        u = rng.standard_normal((count, n)) @ L.T
        return inverse_transform(u, self.coeffs) @ self.rotation.T + self.translation


@dataclass(frozen=True)
class SyntheticPotential:
    """Mixture of curvilinear Gaussians; U = log(sum_k w_k p_k) / 2."""

    kind: str
    components: Tuple[Component, ...]
    weights: np.ndarray = field(default_factory=lambda: np.ones(1))

    @property
    def dim(self):
        return self.components[0].precision.shape[0]

    def _parts(self, x):
        parts = [c.derivatives(x) for c in self.components]
        logs = np.array([p[0] for p in parts]) + np.log(self.weights)
        top = logs.max()
        pi = np.exp(logs - top)
        total = pi.sum()
        return parts, pi / total, top + np.log(total)

    def log_density(self, x):
        x = np.asarray(x, dtype=np.float64)
        logs = np.stack([c.log_density(x) for c in self.components]) + np.log(self.weights).reshape(
            (-1,) + (1,) * (x.ndim - 1)
        )
        top = logs.max(axis=0)
        return top + np.log(np.exp(logs - top).sum(axis=0))

    def potential(self, x):
        return 0.5 * self.log_density(x)

    def gradient(self, x):
        x = np.asarray(x, dtype=np.float64)
        if len(self.components) == 1:
            return 0.5 * self.components[0].log_and_gradient(x)[1]
        parts = [c.log_and_gradient(x) for c in self.components]
        logs = np.array([p[0] for p in parts]) + np.log(self.weights)
        pi = np.exp(logs - logs.max())
        pi /= pi.sum()
        return 0.5 * sum(w * p[1] for w, p in zip(pi, parts))

    def gradient_and_hessian(self, x):
        parts, pi, _ = self._parts(np.asarray(x, dtype=np.float64))
        gbar = sum(w * p[1] for w, p in zip(pi, parts))
        hess = sum(w * (p[2] + np.outer(p[1], p[1])) for w, p in zip(pi, parts)) - np.outer(gbar, gbar)
        hess = 0.5 * (hess + hess.T)
        return 0.5 * gbar, 0.5 * hess

    def hessian(self, x):
        return self.gradient_and_hessian(x)[1]

    def mode_centers(self):
        return np.array([c.translation for c in self.components])

    def sample(self, count, seed=0):
        rng = np.random.default_rng(seed)
        labels = rng.choice(len(self.components), size=count, p=self.weights / self.weights.sum())
        pts = np.empty((count, self.dim))
        for k, comp in enumerate(self.components):
            idx = np.flatnonzero(labels == k)
            if idx.size:
                pts[idx] = comp.sample(idx.size, rng)
        return pts, labels


def gaussian_potential(dim=3, scales=None, translation=None):
    scales = np.ones(dim) if scales is None else np.asarray(scales, dtype=np.float64)
    comp = Component.build(np.diag(scales ** 2), translation=translation)
    return SyntheticPotential("gaussian", (comp,), np.ones(1))


# default shape for the 3D curvilinear example; bent along the first axis
CURVILINEAR_SCALES = (6.0, 3.0, 2.0)
CURVILINEAR_COEFFS = (0.06, 0.03)


def curvilinear_potential(dim=3, scales=None, coeffs=None, rotation=None, translation=None):
    if scales is None:
        base = np.array(CURVILINEAR_SCALES)
        scales = np.resize(base, dim) if dim != 3 else base
    if coeffs is None:
        base = np.array(CURVILINEAR_COEFFS)
        coeffs = np.resize(base, dim - 1) if dim != 3 else base
    comp = Component.build(np.diag(np.asarray(scales, dtype=np.float64) ** 2), coeffs, rotation, translation)
    return SyntheticPotential("curvilinear", (comp,), np.ones(1))


def rotation_about_axis(dim, axis, angle):
    """Rotation by ``angle`` in the plane orthogonal to ``axis`` (3D) / of the two neighbours."""
    R = np.eye(dim)
    a, b = [k for k in range(3) if k != axis]
    c, s = np.cos(angle), np.sin(angle)
    R[a, a], R[a, b], R[b, a], R[b, b] = c, s, -s, c
    return R


def mixture_potential(components, weights=None):
    comps = tuple(components)
    w = np.ones(len(comps)) if weights is None else np.asarray(weights, dtype=np.float64)
    return SyntheticPotential("mixture", comps, w / w.sum())


def two_cluster_mixture(scales=None, coeffs=None):
    """Two curvilinear copies: one at (20, 20, -10), one at (-20, -20, 10) turned a quarter about y."""
    first = curvilinear_potential(3, scales, coeffs, translation=(20.0, 20.0, -10.0)).components[0]
    second = curvilinear_potential(
        3, scales, coeffs, rotation=rotation_about_axis(3, 1, np.pi / 2), translation=(-20.0, -20.0, 10.0)
    ).components[0]
    return mixture_potential([first, second])


def synthetic_sample(pot, count, seed=0):
    pts, labels = pot.sample(count, seed)
    return Dataset(pts, meta={"source": "synthetic", "kind": pot.kind, "seed": seed}), labels


def analytic_grad_u(pot, x):
    return pot.gradient(x)


def verify_stationarity(pot, grid, fd_step=1e-4):
    """max |1/2 Lap p - div(grad U p)| / max p over the grid, with p = exp(2U).

    Both operators are evaluated with central differences of step ``fd_step``.
    """
    grid = np.atleast_2d(np.asarray(grid, dtype=np.float64))
    n = grid.shape[1]
    h = fd_step
    dens = lambda z: np.exp(pot.log_density(z))
    worst = 0.0
    pmax = 0.0
    for x in grid:
        p0 = dens(x)
        pmax = max(pmax, p0)
        lap = 0.0
        div = 0.0
        for i in range(n):
            e = np.zeros(n)
            e[i] = h
            pp, pm = dens(x + e), dens(x - e)
            lap += (pp - 2.0 * p0 + pm) / h ** 2
            div += (pot.gradient(x + e)[i] * pp - pot.gradient(x - e)[i] * pm) / (2 * h)
        worst = max(worst, abs(0.5 * lap - div))
    return worst / pmax


def box_grid(center, half_width, per_axis):
    axes = [np.linspace(c - half_width[i], c + half_width[i], per_axis) for i, c in enumerate(center)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.reshape(-1) for m in mesh], axis=1)
