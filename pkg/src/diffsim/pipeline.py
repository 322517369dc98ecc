"""Coordinate-system construction around density modes.

The procedure per prototype: climb to a mode, fix a Coordinate Sphere, find
the principal axis point on it (Step One), pick orthonormal initial
directions from the metric eigenvectors there (Step Two), and follow
geodesics in each direction to a fixed Euclidean angle (Step Three).
"""
import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage
from scipy.spatial import cKDTree

from .curves import CoefficientFunction, CurvePath, geodesic, rho_curve, transverse_flow
from .density import KernelContext, gradient_ascent
from .errors import DiffsimError, NonConvergence, OptimizationStall, RankDeficient, StationaryStart
from .geometry import (
    ZETA_STRIDE,
    best_center,
    build_frame,
    eigensystem,
    max_direction,
    orthonormal_directions,
    random_min_eigenvectors,
)
from .neighbors import NearestSampler, Sphere, data_sphere, draw_sample_ids

# resampled ascent: stop tolerance in kernel widths, and rounds allowed
ASCENT_TOL = 1e-4
ASCENT_ROUNDS = 200


@dataclass(frozen=True)
class PipelineConfig:
    beta_coarse: float = 0.125
    beta: float = 1.0
    data_sphere: int = 3200
    coord_sphere: int = 800
    sample: int = 800
    sample_count: int = 2
    ascent_sample: Optional[int] = None  # default keeps 2000 per 600,000 points, at least 200
    n_starts: int = 32
    merge_radius: Optional[float] = None
    seed: int = 0
    stop_angle: float = math.pi / 2
    k: int = 12
    step_one_starts: int = 64
    step_one_iters: int = 200
    refine_cap: float = 0.25  # angular radius (rad) of the refined Step One search
    zeta_count: Optional[int] = None
    max_prototypes: Optional[int] = None

    def ascent_size(self, count):
        if self.ascent_sample is not None:
            return min(self.ascent_sample, count)
        return min(count, max(200, int(round(2000 * count / 600000))))


@dataclass
class PrototypeRecord:
    id: int
    raw_prototype: np.ndarray
    modified_prototype: np.ndarray
    data_sphere: Sphere
    coord_sphere: Sphere
    context: KernelContext
    coord_points: Optional[np.ndarray] = None
    starts: int = 1
    sample_ids: Optional[np.ndarray] = None

    @property
    def origin(self):
        return self.modified_prototype


@dataclass
class AxisResult:
    axis_point: np.ndarray
    rho_axis: CurvePath
    fast_point: np.ndarray
    fast_length: float
    refined_length: float
    mode: str
    stalled: bool = False


@dataclass
class GeodesicRecord:
    direction_id: int
    sense: int
    path: Optional[CurvePath]
    error: str = ""

    @property
    def ok(self):
        return self.path is not None and self.path.complete

    @property
    def length(self):
        return self.path.total_riem if self.ok else math.inf


@dataclass
class CoordinateFrame:
    origin: np.ndarray
    axis_point: np.ndarray
    center_axis: int
    max_direction: np.ndarray  # (rho, Theta) coordinates, length n
    min_directions: np.ndarray  # (n-2, n)
    eigenvalues: Tuple[float, float]
    geodesics: Dict[Tuple[int, int], GeodesicRecord] = field(default_factory=dict)
    selected: List[int] = field(default_factory=list)
    rho_axis: Optional[CurvePath] = None

    @property
    def directions(self):
        return np.vstack([self.max_direction[None, :], self.min_directions])

    def distance_row(self, direction_id):
        pos = self.geodesics.get((direction_id, 1))
        neg = self.geodesics.get((direction_id, -1))
        p = pos.length if pos else math.inf
        q = neg.length if neg else math.inf
        return p, q, p + q


# ---------------------------------------------------------------------------
# prototypes
# ---------------------------------------------------------------------------


def _cluster(modes, radius):
    if len(modes) == 1:
        return np.zeros(1, dtype=int)
    return fcluster(linkage(modes, method="single"), t=radius, criterion="distance") - 1


def merge_modes(modes, counts, merge_radius=None, dedupe=0.0):
    """Single-linkage merge; each cluster is represented by its most visited mode.

    Returns (representatives, visit counts, merge radius used).
    """
    modes = np.asarray(modes)
    counts = np.asarray(counts)
    if dedupe > 0 and len(modes) > 1:
        lab = _cluster(modes, dedupe)
        keep = []
        agg = []
        for c in range(lab.max() + 1):
            idx = np.flatnonzero(lab == c)
            keep.append(idx[np.argmax(counts[idx])])
            agg.append(counts[idx].sum())
        order = np.argsort(keep, kind="stable")
        modes = modes[np.array(keep)[order]]
        counts = np.array(agg)[order]
    if merge_radius is None:
        if len(modes) < 2:
            merge_radius = 0.0
        else:
            d, _ = cKDTree(modes).query(modes, k=2)
            merge_radius = 0.5 * float(np.median(d[:, 1]))
    if merge_radius <= 0 or len(modes) == 1:
        return modes, counts, merge_radius
    lab = _cluster(modes, merge_radius)
    reps, agg = [], []
    for c in range(lab.max() + 1):
        idx = np.flatnonzero(lab == c)
        reps.append(idx[np.argmax(counts[idx])])
        agg.append(counts[idx].sum())
    order = np.argsort(reps, kind="stable")
    return modes[np.array(reps)[order]], np.array(agg)[order], merge_radius


def sample_ids(sphere, cfg, seed):
    """Union of ``sample_count`` independent subsamples of a sphere (sorted ids)."""
    m = min(cfg.sample, len(sphere))
    return np.unique(np.concatenate(draw_sample_ids(sphere, m, count=cfg.sample_count, seed=seed)))


def sample_context(ds, sphere, cfg, seed):
    return KernelContext(cfg.beta, ds.points[sample_ids(sphere, cfg, seed)])


def settle(ctx, x, tol=1e-9, max_iter=5000):
    """Follow the drift from x to a mode of ``ctx``; mean-shift finishes the climb."""
    try:
        end = rho_curve(ctx, x).end
    except StationaryStart:
        end = np.asarray(x, dtype=np.float64)
    return gradient_ascent(ctx, end, tol=tol, max_iter=max_iter)


def find_prototypes(ds, n_starts=None, merge_radius=None, seed=0, cfg=PipelineConfig()):
    """Modes of the density by coarse-then-fine resampled mean shift, merged and wrapped."""
    n_starts = cfg.n_starts if n_starts is None else n_starts
    if n_starts < 1:
        raise ValueError("n_starts must be at least 1")
    merge_radius = cfg.merge_radius if merge_radius is None else merge_radius
    rng = np.random.default_rng(seed)
    starts = rng.choice(len(ds), size=min(n_starts, len(ds)), replace=False)
    m = cfg.ascent_size(len(ds))
    coarse = NearestSampler(ds, m, cfg.beta_coarse)
    fine = NearestSampler(ds, m, cfg.beta)
    sigma_c = 1.0 / math.sqrt(2.0 * cfg.beta_coarse)
    sigma = 1.0 / math.sqrt(2.0 * cfg.beta)
    # modes only need to resolve the 0.1 sigma dedupe scale; settle() polishes the survivors
    coarse_modes = []
    for i in starts:
        try:
            coarse_modes.append(gradient_ascent(coarse, ds.points[i], tol=ASCENT_TOL * sigma_c,
                                                max_rounds=ASCENT_ROUNDS))
        except NonConvergence:
            continue
    if not coarse_modes:
        return []
    # coarse modes that coincide are refined once
    seeds, seed_counts, _ = merge_modes(np.array(coarse_modes), np.ones(len(coarse_modes), dtype=int),
                                        0.0, 0.1 * sigma_c)
    modes, counts = [], []
    for x, c in zip(seeds, seed_counts):
        try:
            modes.append(gradient_ascent(fine, x, tol=ASCENT_TOL * sigma, max_rounds=ASCENT_ROUNDS))
            counts.append(c)
        except NonConvergence:
            continue
    if not modes:
        return []
    reps, counts, _ = merge_modes(np.array(modes), np.array(counts), merge_radius, 0.1 * sigma)
    if cfg.max_prototypes is not None:
        order = np.argsort(-counts, kind="stable")[: cfg.max_prototypes]
        reps, counts = reps[np.sort(order)], counts[np.sort(order)]
    built = []
    for j, (raw, cnt) in enumerate(zip(reps, counts)):
        built.append(build_prototype(ds, raw, j, cfg, seed=seed + 7919 * (j + 1), starts=int(cnt)))
    # a candidate whose mode drifts onto a kept prototype under that prototype's density is its twin
    out = []
    for rec in sorted(built, key=lambda r: -r.starts):
        twin = next((o for o in out if _same_basin(o, rec.modified_prototype, 0.1 * sigma)), None)
        if twin is None:
            out.append(rec)
        else:
            twin.starts += rec.starts
    out.sort(key=lambda r: r.id)
    for pid, rec in enumerate(out):
        rec.id = pid
    return out


def _same_basin(rec, x, tol):
    if np.linalg.norm(rec.modified_prototype - x) > rec.data_sphere.radius:
        return False
    try:
        return np.linalg.norm(settle(rec.context, x) - rec.modified_prototype) < tol
    except DiffsimError:
        return False


def build_prototype(ds, raw, pid, cfg, seed, starts=1):
    dsph = data_sphere(ds, raw, min(cfg.data_sphere, len(ds)))
    ids = sample_ids(dsph, cfg, seed)
    ctx = KernelContext(cfg.beta, ds.points[ids])
    mod = settle(ctx, raw)
    csph = data_sphere(ds, mod, min(cfg.coord_sphere, len(ds)))
    return PrototypeRecord(id=pid, raw_prototype=np.asarray(raw), modified_prototype=mod,
                           data_sphere=dsph, coord_sphere=csph, context=ctx,
                           coord_points=ds.points[csph.member_ids], starts=starts, sample_ids=ids)


def coverage(ds, prototypes):
    """Fraction of distinct points that fall inside at least one Data Sphere."""
    uniq, inverse = np.unique(ds.points, axis=0, return_inverse=True)
    hit = np.zeros(len(uniq), dtype=bool)
    for rec in prototypes:
        hit[np.unique(inverse.reshape(-1)[rec.data_sphere.member_ids])] = True
    return float(hit.mean()) if len(uniq) else 0.0


# ---------------------------------------------------------------------------
# Step One: principal axis
# ---------------------------------------------------------------------------


def _shell_descent(ctx, origin, radius, u, iters, gtol=1e-10):
    """Projected descent of |grad U|^2 over the sphere |x - origin| = radius."""
    x = origin + radius * u
    g, h = ctx.gradient_and_hessian(x)
    f = g @ g
    step = 0.1 * radius
    for _ in range(iters):
        grad = 2.0 * h @ g
        tang = grad - (grad @ u) * u
        tn = np.linalg.norm(tang)
        if tn * radius < gtol * max(1.0, f):
            break
        while step > 1e-12 * radius:
            un = u - step * tang / (tn * radius)
            un /= np.linalg.norm(un)
            xn = origin + radius * un
            gn = ctx.gradient(xn)
            fn = gn @ gn
            if fn < f - 1e-4 * step * tn:
                break
            step *= 0.5
        else:
            break
        u, x, f = un, xn, fn
        g, h = ctx.gradient_and_hessian(x)
        step *= 2.0
    return u, f


def _shell_ascent_u(ctx, origin, radius, u0, cap, iters):
    """Projected ascent of U over the shell, kept within angle ``cap`` of u0."""
    u = u0.copy()
    x = origin + radius * u
    val = ctx.potential(x)
    step = 0.05 * radius
    for _ in range(iters):
        g = ctx.gradient(x)
        tang = g - (g @ u) * u
        tn = np.linalg.norm(tang)
        if tn == 0:
            break
        improved = False
        while step > 1e-10 * radius:
            un = u + step * tang / (tn * radius)
            un /= np.linalg.norm(un)
            if math.acos(min(1.0, un @ u0)) > cap:
                step *= 0.5
                continue
            vn = ctx.potential(origin + radius * un)
            if vn > val + 1e-4 * step * tn:
                improved = True
                break
            step *= 0.5
        if not improved:
            break
        u, val = un, vn
        x = origin + radius * u
        step *= 2.0
    return u


def _reaches(path, origin, tol):
    return path.reason == "mode" and np.linalg.norm(path.end - origin) <= tol


def principal_axis(rec, ctx=None, mode="refined", cfg=PipelineConfig(), seed=0, candidates=8):
    """Step One for a prototype: see :func:`principal_axis_at`."""
    ctx = rec.context if ctx is None else ctx
    pool = rec.coord_points if rec.coord_points is not None else ctx.sample
    return principal_axis_at(ctx, rec.origin, rec.coord_sphere.radius, pool, mode, cfg, seed, candidates)


def principal_axis_at(fieldobj, origin, radius, start_points=None, mode="refined", cfg=PipelineConfig(),
                      seed=0, candidates=8):
    """Point on the shell |x - origin| = radius whose inward drift curve is shortest.

    The fast pass minimizes |grad U|^2 over the shell by projected descent
    from the directions of ``start_points`` (random directions if none);
    the first minimizer (by value) whose inward curve reaches the origin is
    kept. The refined pass searches its neighborhood for larger U, which is
    the same as a shorter inward Riemannian length for curves that still
    reach the origin, and keeps whichever of the two is shorter.
    """
    origin = np.asarray(origin, dtype=np.float64)
    R = float(radius)
    if not R > 0:
        raise ValueError("coordinate sphere has zero radius")
    rng = np.random.default_rng(seed)
    dirs = np.empty((0, origin.shape[0]))
    if start_points is not None:
        dirs = np.asarray(start_points, dtype=np.float64) - origin
        dirs = dirs[np.linalg.norm(dirs, axis=1) > 1e-9 * max(R, 1.0)]
    if len(dirs) > cfg.step_one_starts:
        dirs = dirs[np.sort(rng.choice(len(dirs), cfg.step_one_starts, replace=False))]
    if len(dirs) == 0:
        dirs = rng.standard_normal((cfg.step_one_starts, origin.shape[0]))
    dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)

    found = []
    for u in dirs:
        uu, f = _shell_descent(fieldobj, origin, R, u, cfg.step_one_iters)
        found.append((f, uu))
    found.sort(key=lambda t: t[0])
    uniq = []
    for f, u in found:
        if all(np.linalg.norm(u - v) > 1e-4 for _, v in uniq):
            uniq.append((f, u))
    tol = 0.05 * R
    best = fallback = None
    for f, u in uniq[:candidates]:
        try:
            path = rho_curve(fieldobj, origin + R * u)
        except DiffsimError:
            continue
        if _reaches(path, origin, tol):
            best = (u, path)
            break
        fallback = fallback or (u, path)
    if best is None and fallback is None:
        raise OptimizationStall("no shell minimizer gives an inward curve", origin + R * uniq[0][1])
    # without a curve into the origin, the best minimizer comes back flagged
    u_fast, fast_path = best or fallback
    result = AxisResult(axis_point=origin + R * u_fast, rho_axis=fast_path, fast_point=origin + R * u_fast,
                        fast_length=fast_path.total_riem, refined_length=fast_path.total_riem, mode="fast",
                        stalled=best is None)
    if mode == "fast" or result.stalled:
        return result
    u_ref = _shell_ascent_u(fieldobj, origin, R, u_fast, cfg.refine_cap, cfg.step_one_iters)
    try:
        ref_path = rho_curve(fieldobj, origin + R * u_ref)
    except DiffsimError:
        return result
    if _reaches(ref_path, origin, tol) and ref_path.total_riem <= fast_path.total_riem:
        result.axis_point, result.rho_axis = origin + R * u_ref, ref_path
        result.refined_length = ref_path.total_riem
        result.mode = "refined"
    return result


def outward_length(ctx, axis_point, length):
    """Outward drift curve from the axis point covering ``length`` of Euclidean distance."""
    return rho_curve(ctx, axis_point, direction="outward", target_length=length)


# ---------------------------------------------------------------------------
# Steps Two and Three
# ---------------------------------------------------------------------------


def build_frame_at_axis(rec, ctx, axis_point, seed=0, zeta_count=None, stride=ZETA_STRIDE):
    """Metric eigenvectors at the axis point: the maximal one and n-2 orthonormal minimal ones."""
    g = ctx.gradient(axis_point)
    frame = build_frame(g, best_center(g))
    eig = eigensystem(frame)
    while True:
        zetas = random_min_eigenvectors(frame, count=zeta_count, seed=seed, stride=stride, eig=eig)
        try:
            mins = orthonormal_directions(frame, zetas)
            break
        except RankDeficient:
            if stride == 1:
                raise
            stride = max(1, stride // 2)
    origin = rec.origin if isinstance(rec, PrototypeRecord) else np.asarray(rec)
    return CoordinateFrame(origin=np.asarray(origin), axis_point=np.asarray(axis_point), center_axis=frame.center_axis,
                           max_direction=max_direction(eig), min_directions=mins,
                           eigenvalues=(eig.lambda_max, eig.lambda_min))


def geodesic_batch(cframe, ctx, directions=None, stop_angle=math.pi / 2, senses=(1, -1), **kw):
    """Geodesics from the axis point in each direction and sense; failures are recorded."""
    dirs = cframe.directions
    ids = range(len(dirs)) if directions is None else directions
    for d in ids:
        for sense in senses:
            try:
                path = geodesic(ctx, cframe.axis_point, cframe.origin, sense * dirs[d][1:],
                                stop_angle=stop_angle, center_axis=cframe.center_axis, **kw)
                rec = GeodesicRecord(d, sense, path, "" if path.complete else path.reason)
            except DiffsimError as exc:
                rec = GeodesicRecord(d, sense, None, f"{type(exc).__name__}: {exc}")
            cframe.geodesics[(d, sense)] = rec
    return cframe


def rank_minimal(totals, count):
    """Ids of the ``count`` finite totals, ascending, ties to the lower id."""
    ranked = sorted((t, d) for d, t in totals.items() if math.isfinite(t))
    if count > len(ranked):
        raise ValueError(f"need {count} completed minimal curves, only {len(ranked)} available")
    return [d for _, d in ranked[:count]]


def select_coordinates(cframe, k):
    """rho, the maximal curve (id 0), then the k-2 minimal curves of least total distance."""
    if k < 2:
        raise ValueError("k must be at least 2")
    totals = {d: cframe.distance_row(d)[2] for d in range(1, len(cframe.directions))}
    cframe.selected = [0] + rank_minimal(totals, k - 2)
    return ["rho"] + cframe.selected


# ---------------------------------------------------------------------------
# reconstruction error (charts with two Theta coordinates)
# ---------------------------------------------------------------------------


@dataclass
class Reconstruction:
    rms: float
    errors: np.ndarray
    used: int
    failures: int


def rms(errors):
    errors = np.asarray(errors, dtype=np.float64)
    return float(np.sqrt(np.mean(errors ** 2))) if errors.size else math.nan


def _sheet(fieldobj, base_paths, drop_coeffs, n_base, max_step):
    """Transverse flows of the dropped coordinate from points spread along the kept curves."""
    curves = []
    for path in base_paths:
        s = path.euclid_len
        targets = np.linspace(0.0, s[-1], n_base)
        for tgt in targets:
            i = min(np.searchsorted(s, tgt), len(s) - 1)
            base = path.points[i]
            for cf in drop_coeffs:
                try:
                    fl = transverse_flow(fieldobj, base, cf, cf.t_max, max_step=max_step)
                except DiffsimError:
                    continue
                curves.append(fl)
    return curves


@dataclass
class Projection:
    points: np.ndarray  # projected points (NaN rows where projection failed)
    scale: np.ndarray  # drift-curve distance ratio, point over projection (NaN on failure)

    @property
    def ok(self):
        return np.isfinite(self.scale)


def project_to_level(fieldobj, data, level):
    """Slide each point along its drift curve onto U = level.

    Also records the scale factor: the point's distance to the mode along its
    drift curve divided by the same distance for its projection.
    """
    data = np.atleast_2d(np.asarray(data, dtype=np.float64))
    out = np.full(data.shape, np.nan)
    scale = np.full(len(data), np.nan)
    for i, x in enumerate(data):
        try:
            ux = fieldobj.potential(x)
            direction = "inward" if ux < level else "outward"
            path = rho_curve(fieldobj, x, direction=direction, target_potential=level)
            if path.reason != "level":
                continue
            y = path.end
            inner = rho_curve(fieldobj, y).total_euclid
        except DiffsimError:
            continue
        if inner <= 0:
            continue
        shift = path.total_euclid if direction == "inward" else -path.total_euclid
        out[i] = y
        scale[i] = (inner + shift) / inner
    return Projection(points=out, scale=scale)


def reconstruction_errors(fieldobj, cframe, projection, kept, dropped, n_base=41, max_step=np.inf, tol_factor=3.0):
    """Scaled dropped-flow distance per projected point (NaN where it cannot be measured).

    The integral manifold through the axis point is swept by flows of the
    dropped coordinate issued from points along the kept coordinate curve.
    The flow distance at the point of closest approach is the raw error,
    multiplied by the projection's scale factor. Points outside the swept
    region are marked NaN.
    """
    kept_paths = [cframe.geodesics[(kept, s)].path for s in (1, -1)]
    drop_coeffs = [CoefficientFunction(cframe.geodesics[(dropped, s)].path) for s in (1, -1)]
    curves = _sheet(fieldobj, kept_paths, drop_coeffs, n_base, max_step)
    pts = np.vstack([c.points for c in curves])
    lens = np.concatenate([c.euclid_len for c in curves])
    spacing = np.median(np.concatenate([np.linalg.norm(np.diff(c.points, axis=0), axis=1) for c in curves]))
    base_gap = max(p.total_euclid for p in kept_paths) / (n_base - 1)
    reach = tol_factor * max(spacing, base_gap)
    tree = cKDTree(pts)
    errors = np.full(len(projection.scale), np.nan)
    for i in np.flatnonzero(projection.ok):
        d, idx = tree.query(projection.points[i], k=8)
        if d[0] > reach:
            continue
        w = 1.0 / np.maximum(d, 1e-12)
        errors[i] = float(np.sum(w * lens[idx]) / np.sum(w)) * projection.scale[i]
    return errors


def reconstruction_rms(fieldobj, cframe, data, kept, dropped, projection=None, **kw):
    """RMS reconstruction error when ``dropped`` is left out of the chart.

    Points that cannot be projected or measured are excluded and counted.
    """
    if projection is None:
        projection = project_to_level(fieldobj, data, fieldobj.potential(cframe.axis_point))
    errors = reconstruction_errors(fieldobj, cframe, projection, kept, dropped, **kw)
    good = errors[np.isfinite(errors)]
    return Reconstruction(rms=rms(good), errors=errors, used=good.size, failures=int(np.sum(~np.isfinite(errors))))


# ---------------------------------------------------------------------------
# PCA baseline
# ---------------------------------------------------------------------------


def pca_baseline(sphere, ds, k):
    pts = ds.points[np.asarray(sphere.member_ids)]
    if len(pts) < k:
        raise ValueError("sphere has fewer members than requested components")
    cov = np.cov(pts, rowvar=False)
    vals, vecs = np.linalg.eigh(cov)
    order = np.argsort(vals)[::-1][:k]
    vecs = vecs[:, order].T
    # fix signs: largest-magnitude entry positive
    flip = np.sign(vecs[np.arange(k), np.argmax(np.abs(vecs), axis=1)])
    return vecs * flip[:, None], vals[order]
