"""End-to-end acceptance checks; each prints one PASS/FAIL line with its measured value."""
import filecmp
import math
import time

import numpy as np
import pytest

from diffsim import cli, data
from diffsim.curves import geodesic, rho_curve
from diffsim.density import KernelContext, grad_log_density, grad_u, grad_u_jacobian
from diffsim.errors import DiffsimError
from diffsim.geometry import best_center, build_frame, eigensystem, metric
from diffsim.pipeline import (
    PipelineConfig,
    build_frame_at_axis,
    find_prototypes,
    geodesic_batch,
    outward_length,
    principal_axis,
    principal_axis_at,
    project_to_level,
    reconstruction_errors,
    rms,
)

MNIST_IMAGES = "data/mnist5k-images-idx3-ubyte.gz"


def verdict(capsys, num, ok, detail):
    with capsys.disabled():
        print(f"\n[criterion {num}] {'PASS' if ok else 'FAIL'}: {detail}")
    assert ok, detail


def _cos(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


# ---------------------------------------------------------------------------
# shared runs
# ---------------------------------------------------------------------------


@pytest.fixture(scope="module")
def sphere_geodesics():
    pot = data.gaussian_potential(3)
    rng = np.random.default_rng(0)
    runs = []
    t0 = time.perf_counter()
    for r in (0.5, 1.0, 2.0, 3.5):
        u = rng.normal(size=3)
        x0 = r * u / np.linalg.norm(u)
        fr = build_frame(pot.gradient(x0), best_center(pot.gradient(x0)))
        eig = eigensystem(fr)
        for v0 in (eig.xi_min[0][1:], eig.xi1[1:]):
            runs.append((r, geodesic(pot, x0, np.zeros(3), v0, center_axis=fr.center_axis)))
    return runs, time.perf_counter() - t0


@pytest.fixture(scope="module")
def mnist_run():
    t0 = time.perf_counter()
    imgs = data.parse_idx(MNIST_IMAGES)
    ds = data.extract_patches(imgs, data.PatchConfig(seed=0))
    cfg = PipelineConfig()
    protos = find_prototypes(ds, n_starts=40, seed=0, cfg=cfg)
    rows = []
    for p in protos:
        row = {"id": p.id, "coord_radius": p.coord_sphere.radius}
        rows.append(row)
        if p.coord_sphere.radius <= 1e-6:
            row["skip"] = "zero-radius coordinate sphere"
            continue
        try:
            ax = principal_axis(p, cfg=cfg, seed=p.id)
        except DiffsimError as exc:
            row["skip"] = str(exc)
            continue
        if ax.stalled:
            row["skip"] = "principal axis stalled"
            continue
        out = outward_length(p.context, ax.axis_point, ax.rho_axis.total_euclid)
        frame = build_frame_at_axis(p, p.context, ax.axis_point, seed=p.id)
        geodesic_batch(frame, p.context, directions=[0])
        ends = []
        for sense in (1, -1):
            g = frame.geodesics[(0, sense)]
            if g.ok:
                ends.append(rho_curve(p.context, g.path.end).total_riem)
        row.update(euclid_in=ax.rho_axis.total_euclid, riem_in=ax.rho_axis.total_riem,
                   riem_out=out.total_riem, ends=ends,
                   geodesics=[g.path for g in frame.geodesics.values() if g.path is not None])
    return ds, rows, time.perf_counter() - t0


@pytest.fixture(scope="module")
def curvilinear_chart():
    t0 = time.perf_counter()
    pot = data.curvilinear_potential(3)
    ax = principal_axis_at(pot, np.zeros(3), 8.0)
    frame = build_frame_at_axis(np.zeros(3), pot, ax.axis_point)
    geodesic_batch(frame, pot)
    return pot, ax, frame, time.perf_counter() - t0


# ---------------------------------------------------------------------------
# criteria
# ---------------------------------------------------------------------------


def _estimator_case(kind, n):
    pot = data.gaussian_potential(n, np.linspace(2.0, 1.0, n)) if kind == "gaussian" else data.curvilinear_potential(n)
    ds, _ = data.synthetic_sample(pot, 10000, seed=1)
    comp = pot.components[0]
    u = np.array([comp.local(x) for x in ds.points])
    maha = np.sqrt(np.einsum("ij,jk,ik->i", u, comp.precision, u))
    rng = np.random.default_rng(2)
    idx = rng.choice(np.flatnonzero(maha <= math.sqrt(n)), 200, replace=False)
    # per-axis standardized coordinates with a widened normal-reference bandwidth
    mu, sd = ds.points.mean(axis=0), ds.points.std(axis=0)
    z = (ds.points - mu) / sd
    h = 1.5 * 10000 ** (-1.0 / (n + 4))
    ctx = KernelContext(1.0 / (2 * h * h), z)
    cos = np.array([_cos(grad_log_density(ctx, z[i]) / sd, 2 * pot.gradient(ds.points[i])) for i in idx])
    jac_err = 0.0
    step = 1e-5
    for i in idx[:10]:
        J = grad_u_jacobian(ctx, z[i])
        fd = np.empty((n, n))
        for k in range(n):
            e = np.zeros(n)
            e[k] = step
            fd[:, k] = (grad_u(ctx, z[i] + e).du - grad_u(ctx, z[i] - e).du) / (2 * step)
        jac_err = max(jac_err, np.abs(J - fd).max() / np.abs(J).max())
    return float(cos.mean()), jac_err


def test_criterion_1_estimator(capsys):
    t0 = time.perf_counter()
    results = {(k, n): _estimator_case(k, n) for k in ("gaussian", "curvilinear") for n in (3, 10)}
    elapsed = time.perf_counter() - t0
    worst_cos = min(c for c, _ in results.values())
    worst_jac = max(j for _, j in results.values())
    ok = worst_cos > 0.95 and worst_jac < 1e-5 and elapsed < 30
    detail = ", ".join(f"{k}{n}: cos={c:.4f} jac={j:.1e}" for (k, n), (c, j) in results.items())
    verdict(capsys, 1, ok, f"mean cosine min {worst_cos:.4f} > 0.95, jacobian rel {worst_jac:.1e} < 1e-5, "
                           f"{elapsed:.1f}s < 30s [{detail}]")


def test_criterion_2_eigensystem(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(1000):
        n = int(rng.integers(3, 17))
        g = rng.normal(size=n)
        fr = build_frame(g, best_center(g))
        eig = eigensystem(fr)
        closed = np.sort([eig.lambda_max] * 2 + [eig.lambda_min] * (n - 2))
        dense = np.linalg.eigvalsh(metric(fr).g)
        worst = max(worst, float(np.max(np.abs(dense - closed) / closed)))
    elapsed = time.perf_counter() - t0
    verdict(capsys, 2, worst < 1e-9 and elapsed < 10,
            f"max relative eigenvalue error {worst:.1e} < 1e-9 over 1000 gradients, {elapsed:.1f}s < 10s")


def test_criterion_3_sphere_oracle(capsys, sphere_geodesics):
    runs, elapsed = sphere_geodesics
    err_e = max(abs(p.total_euclid / (math.pi / 2 * r) - 1) for r, p in runs)
    err_r = max(abs(p.total_riem / (math.pi / 2 * r) - 1) for r, p in runs)
    tang = max(p.tangency for _, p in runs)
    done = all(p.complete for _, p in runs)
    ok = done and err_e < 1e-3 and err_r < 1e-3 and tang < 1e-6 and elapsed < 60
    verdict(capsys, 3, ok, f"{len(runs)} quarter circles: euclid rel err {err_e:.1e}, riem rel err {err_r:.1e} "
                           f"< 1e-3, tangency {tang:.1e} < 1e-6, {elapsed:.1f}s < 60s")


@pytest.mark.slow
def test_criterion_4_inward_outward_ordering(capsys, mnist_run):
    ds, rows, elapsed = mnist_run
    evaluated = [r for r in rows if "riem_in" in r]
    passing = [r for r in evaluated if r["riem_in"] < r["euclid_in"] and r["riem_out"] > 3 * r["riem_in"]]
    ratios = ", ".join(f"p{r['id']}: in {r['riem_in']:.4f}/{r['euclid_in']:.4f} out/in "
                       f"{r['riem_out'] / r['riem_in']:.2f}" for r in evaluated)
    skipped = ", ".join(f"p{r['id']} ({r['skip']})" for r in rows if "skip" in r)
    ok = len(passing) >= 3 and elapsed < 900
    verdict(capsys, 4, ok, f"{len(passing)} of {len(evaluated)} prototypes satisfy both orderings (need >= 3), "
                           f"{len(ds)} patches, {elapsed:.0f}s < 900s [{ratios}; skipped: {skipped or 'none'}]")


@pytest.mark.slow
def test_criterion_5_constant_riemannian_distance(capsys, mnist_run):
    _, rows, _ = mnist_run
    spreads = []
    for r in rows:
        if "riem_in" in r and r["ends"]:
            vals = [r["riem_in"]] + r["ends"]
            spreads.append((r["id"], (max(vals) - min(vals)) / float(np.mean(vals))))
    worst = max(s for _, s in spreads) if spreads else math.inf
    detail = ", ".join(f"p{i}: {s:.2e}" for i, s in spreads)
    verdict(capsys, 5, bool(spreads) and worst <= 0.05,
            f"max spread {worst:.2e} <= 5% over {len(spreads)} prototypes [{detail}]")


def test_criterion_6_arc_length_identity(capsys, sphere_geodesics, curvilinear_chart, mnist_run):
    paths = [p for _, p in sphere_geodesics[0]]
    paths += [g.path for g in curvilinear_chart[2].geodesics.values() if g.path is not None]
    for r in mnist_run[1]:
        paths += r.get("geodesics", [])
    worst = max(abs(p.total_riem - p.total_euclid) / p.total_euclid for p in paths)
    verdict(capsys, 6, worst <= 1e-3, f"max |riem - euclid| / euclid {worst:.1e} <= 1e-3 over {len(paths)} geodesics")


def test_criterion_7_reconstruction_ordering(capsys, curvilinear_chart):
    pot, ax, frame, build_time = curvilinear_chart
    t0 = time.perf_counter()
    ds, _ = data.synthetic_sample(pot, 1500, seed=3)
    proj = project_to_level(pot, ds.points, pot.potential(ax.axis_point))
    keep_min = reconstruction_errors(pot, frame, proj, kept=1, dropped=0)
    keep_max = reconstruction_errors(pot, frame, proj, kept=0, dropped=1)
    common = np.flatnonzero(np.isfinite(keep_min) & np.isfinite(keep_max))[:1000]
    rms_min, rms_max = rms(keep_min[common]), rms(keep_max[common])
    elapsed = build_time + time.perf_counter() - t0
    ok = len(common) == 1000 and rms_min < rms_max and elapsed < 300
    verdict(capsys, 7, ok, f"RMS keeping minimal {rms_min:.4f} < keeping maximal {rms_max:.4f} over "
                           f"{len(common)} projected points, {elapsed:.0f}s < 300s")


def test_criterion_8_stationarity(capsys):
    cases = [(data.gaussian_potential(3, [2.0, 1.0, 0.5]), np.array([4.0, 2.0, 1.0])),
             (data.curvilinear_potential(3), np.array([12.0, 6.0, 4.0]))]
    res = {pot.kind: data.verify_stationarity(pot, data.box_grid(np.zeros(3), hw, 7)) for pot, hw in cases}
    worst = max(res.values())
    verdict(capsys, 8, worst < 1e-5, ", ".join(f"{k} residual {v:.1e}" for k, v in res.items()) + " < 1e-5")


def test_criterion_9_mixture_separation(capsys):
    mix = data.two_cluster_mixture()
    worst, count = 1.0, 0
    for k, comp in enumerate(mix.components):
        single = data.SyntheticPotential(mix.kind, (comp,), np.ones(1))
        pts = comp.sample(2000, np.random.default_rng(k))
        u = np.array([comp.local(x) for x in pts])
        inside = pts[np.sqrt(np.einsum("ij,jk,ik->i", u, comp.precision, u)) <= 1.0]
        count += len(inside)
        worst = min(worst, min(_cos(mix.gradient(x), single.gradient(x)) for x in inside))
    verdict(capsys, 9, worst > 0.99, f"min cosine {worst:.6f} > 0.99 at {count} points inside 1 sigma")


SYNTHETIC_RUN = """[diffsim]
dataset = synthetic
synthetic_kind = curvilinear
synthetic_count = 2000
synthetic_dim = 4
beta = 0.1
beta_coarse = 0.02
data_sphere = 800
coord_sphere = 400
sample = 400
n_starts = 8
max_prototypes = 2
step_one_starts = 16
k = 3
"""


def test_criterion_10_determinism(capsys, tmp_path):
    cfg = tmp_path / "run.ini"
    cfg.write_text(SYNTHETIC_RUN)
    codes = [cli.main(["run", "--config", str(cfg), "--out", str(tmp_path / name)]) for name in ("a", "b")]
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    reports = [f for f in files if f.suffix in (".json", ".csv")]
    same = all(filecmp.cmp(tmp_path / "a" / f, tmp_path / "b" / f, shallow=False) for f in files)
    ok = codes == [0, 0] and same and len(reports) > 10
    verdict(capsys, 10, ok, f"exit codes {codes}, {len(files)} files ({len(reports)} JSON/CSV) byte-identical: {same}")
