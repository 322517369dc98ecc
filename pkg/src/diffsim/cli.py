"""Command-line driver: staged runs from a dataset to coordinate reports.

Stages write into the output directory and read their predecessors'
artifacts. Each artifact carries a hash of the configuration values that
shaped it; a stage refuses upstream artifacts whose hash no longer matches.

Exit codes: 0 success, 2 configuration error, 3 stage error.
"""
import argparse
import configparser
import dataclasses
import hashlib
import math
import re
import sys
from pathlib import Path

import numpy as np

from . import data as data_mod
from .curves import CurvePath, rho_curve
from .density import KernelContext
from .errors import ConfigError, DiffsimError, StageError
from .neighbors import data_sphere
from .pipeline import (
    PipelineConfig,
    PrototypeRecord,
    build_frame_at_axis,
    coverage,
    find_prototypes,
    geodesic_batch,
    outward_length,
    pca_baseline,
    principal_axis,
    rank_minimal,
)
from .report import (
    canonical_json,
    config_hash,
    curve_tiles,
    read_json,
    tile_grid,
    write_curve,
    write_json,
    write_pgm,
    write_table,
)

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3


@dataclasses.dataclass
class RunConfig:
    dataset: str = "synthetic"
    images: str = "data/mnist5k-images-idx3-ubyte.gz"
    image_count: int = 5000
    patch_size: int = 7
    scans_per_image: int = 10
    synthetic_kind: str = "gaussian"
    synthetic_count: int = 2000
    synthetic_dim: int = 3
    synthetic_scale: float = 0.5
    seed: int = 0
    beta: float = 1.0
    beta_coarse: float = 0.125
    data_sphere: int = 3200
    coord_sphere: int = 800
    sample: int = 800
    sample_count: int = 2
    ascent_sample: int = 0
    n_starts: int = 32
    max_prototypes: int = 4
    min_coord_radius: float = 1e-6
    step_one_starts: int = 64
    step_one_iters: int = 200
    stop_angle: float = math.pi / 2
    directions: int = 0
    zeta_count: int = 0
    k: int = 12
    tiles: int = 12
    out: str = "run"

    def validate(self):
        if self.dataset not in ("synthetic", "mnist"):
            raise ConfigError("dataset must be 'synthetic' or 'mnist'")
        if self.synthetic_kind not in ("gaussian", "curvilinear", "mixture"):
            raise ConfigError("synthetic_kind must be gaussian, curvilinear or mixture")
        positive = ("image_count", "patch_size", "scans_per_image", "synthetic_count", "synthetic_dim",
                    "data_sphere", "coord_sphere", "sample", "sample_count", "n_starts", "max_prototypes",
                    "step_one_starts", "step_one_iters", "k", "tiles")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("beta", "beta_coarse", "synthetic_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.ascent_sample < 0 or self.directions < 0 or self.zeta_count < 0:
            raise ConfigError("ascent_sample, directions and zeta_count must be non-negative")
        if not 0 < self.stop_angle <= math.pi:
            raise ConfigError("stop_angle must lie in (0, pi]")
        if self.synthetic_kind == "mixture" and self.synthetic_dim != 3:
            raise ConfigError("the mixture dataset is three-dimensional")
        if self.k < 2:
            raise ConfigError("k must be at least 2")
        return self

    def pipeline(self):
        return PipelineConfig(
            beta_coarse=self.beta_coarse, beta=self.beta, data_sphere=self.data_sphere,
            coord_sphere=self.coord_sphere, sample=self.sample, sample_count=self.sample_count,
            ascent_sample=self.ascent_sample or None, n_starts=self.n_starts, seed=self.seed,
            stop_angle=self.stop_angle, k=self.k, step_one_starts=self.step_one_starts,
            step_one_iters=self.step_one_iters, zeta_count=self.zeta_count or None,
            max_prototypes=self.max_prototypes,
        )


# configuration keys that shape each stage (cumulative down the chain)
STAGE_KEYS = {
    "dataset": ("dataset", "images", "image_count", "patch_size", "scans_per_image", "synthetic_kind",
                "synthetic_count", "synthetic_dim", "synthetic_scale", "seed"),
    "prototypes": ("beta", "beta_coarse", "data_sphere", "coord_sphere", "sample", "sample_count",
                   "ascent_sample", "n_starts", "max_prototypes"),
    "axes": ("min_coord_radius", "step_one_starts", "step_one_iters"),
    "geodesics": ("stop_angle", "directions", "zeta_count"),
    "coords": ("k",),
    "report": ("tiles",),
}
ORDER = ["dataset", "prototypes", "axes", "geodesics", "coords", "report"]


def stage_hash(cfg, stage):
    keys = []
    for name in ORDER[: ORDER.index(stage) + 1]:
        keys.extend(STAGE_KEYS[name])
    values = {k: getattr(cfg, k) for k in keys}
    if cfg.dataset == "mnist":
        values["images_sha256"] = _file_digest(cfg.images)
    return config_hash(values)


_digests = {}


def _file_digest(path):
    if path not in _digests:
        try:
            _digests[path] = hashlib.sha256(Path(path).read_bytes()).hexdigest()
        except OSError as exc:
            raise ConfigError(f"cannot read {path}: {exc}") from exc
    return _digests[path]


def parse_angle(text):
    """Float, or a multiple/fraction of pi such as 'pi/2' or '0.5*pi'."""
    t = str(text).strip().replace(" ", "")
    m = re.fullmatch(r"(?:([0-9.eE+-]+)\*)?pi(?:/([0-9.eE+-]+))?", t)
    try:
        if m:
            num = float(m.group(1)) if m.group(1) else 1.0
            den = float(m.group(2)) if m.group(2) else 1.0
            return num * math.pi / den
        return float(t)
    except ValueError as exc:
        raise ConfigError(f"cannot read angle {text!r}") from exc


def _coerce(name, value):
    kind = {f.name: f.type for f in dataclasses.fields(RunConfig)}[name]
    if name == "stop_angle":
        return parse_angle(value)
    try:
        if kind in (int, "int"):
            return int(value)
        if kind in (float, "float"):
            return float(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {name}: {value!r}") from exc
    return str(value)


def load_config(path=None, overrides=None):
    values = {}
    if path is not None:
        parser = configparser.ConfigParser()
        try:
            with open(path) as fh:
                parser.read_file(fh)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        if not parser.has_section("diffsim"):
            raise ConfigError("config needs a [diffsim] section")
        known = {f.name for f in dataclasses.fields(RunConfig)}
        for key, value in parser.items("diffsim"):
            if key not in known:
                raise ConfigError(f"unknown config key {key!r}")
            values[key] = _coerce(key, value)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = _coerce(key, value)
    return RunConfig(**values).validate()


# ---------------------------------------------------------------------------
# stage plumbing
# ---------------------------------------------------------------------------


def _out(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "curves").mkdir(exist_ok=True)
    return out


def _manifest(cfg, stage, body):
    doc = {"stage": stage, "config_hash": stage_hash(cfg, stage), "seed": cfg.seed}
    doc.update(body)
    write_json(_out(cfg) / f"{stage}.json", doc)
    return doc


def _require(cfg, stage):
    path = Path(cfg.out) / f"{stage}.json"
    if not path.exists():
        raise StageError(f"missing {stage} artifacts in {cfg.out}; run that stage first")
    doc = read_json(path)
    if doc.get("config_hash") != stage_hash(cfg, stage):
        raise ConfigError(f"{stage} artifacts were produced with a different configuration")
    return doc


def _dataset(cfg):
    _require(cfg, "dataset")
    return data_mod.read_cache(Path(cfg.out) / "dataset_cache")


def _synthetic_potential(cfg):
    if cfg.synthetic_kind == "gaussian":
        return data_mod.gaussian_potential(cfg.synthetic_dim, np.full(cfg.synthetic_dim, cfg.synthetic_scale))
    if cfg.synthetic_kind == "curvilinear":
        return data_mod.curvilinear_potential(cfg.synthetic_dim)
    return data_mod.two_cluster_mixture()


def cmd_ingest(cfg):
    if not Path(cfg.images).is_file():
        raise ConfigError(f"images file {cfg.images} not found")
    imgs = data_mod.parse_idx(cfg.images)
    if imgs.ndim != 3:
        raise ConfigError("images file does not hold a 3-axis image array")
    imgs = imgs[: cfg.image_count]
    ds = data_mod.extract_patches(imgs, data_mod.PatchConfig(cfg.patch_size, cfg.scans_per_image, seed=cfg.seed))
    prov = {"images": Path(cfg.images).name, "images_sha256": _file_digest(cfg.images)}
    meta = data_mod.write_cache(Path(_out(cfg)) / "dataset_cache", ds, provenance=prov)
    meta["seed"] = cfg.seed
    return _manifest(cfg, "dataset", {"count": len(ds), "dim": ds.dim, "source": "mnist", "provenance": prov})


def cmd_synthetic(cfg):
    pot = _synthetic_potential(cfg)
    ds, labels = data_mod.synthetic_sample(pot, cfg.synthetic_count, seed=cfg.seed)
    prov = {"kind": cfg.synthetic_kind, "seed": cfg.seed}
    data_mod.write_cache(Path(_out(cfg)) / "dataset_cache", ds, provenance=prov)
    return _manifest(cfg, "dataset", {"count": len(ds), "dim": ds.dim, "source": "synthetic", "provenance": prov})


def _load_prototypes(cfg, ds):
    doc = _require(cfg, "prototypes")
    recs = []
    for p in doc["prototypes"]:
        raw = np.array(p["raw_prototype"])
        mod = np.array(p["modified_prototype"])
        ids = np.array(p["sample_ids"], dtype=np.int64)
        dsph = data_sphere(ds, raw, min(cfg.data_sphere, len(ds)))
        csph = data_sphere(ds, mod, min(cfg.coord_sphere, len(ds)))
        recs.append(PrototypeRecord(id=p["id"], raw_prototype=raw, modified_prototype=mod, data_sphere=dsph,
                                    coord_sphere=csph, context=KernelContext(cfg.beta, ds.points[ids]),
                                    coord_points=ds.points[csph.member_ids], starts=p["starts"], sample_ids=ids))
    return doc, recs


def cmd_prototypes(cfg):
    ds = _dataset(cfg)
    recs = find_prototypes(ds, cfg.n_starts, seed=cfg.seed, cfg=cfg.pipeline())
    rows, protos = [], []
    for r in recs:
        protos.append({
            "id": r.id, "starts": r.starts, "raw_prototype": r.raw_prototype,
            "modified_prototype": r.modified_prototype, "sample_ids": r.sample_ids,
            "data_sphere_radius": r.data_sphere.radius, "coord_sphere_radius": r.coord_sphere.radius,
            "data_sphere_size": len(r.data_sphere), "coord_sphere_size": len(r.coord_sphere),
        })
        rows.append([r.id, r.data_sphere.radius, r.coord_sphere.radius])
    out = _out(cfg)
    write_table(out / "table1.csv", ["prototype", "data_sphere_radius", "coord_sphere_radius"], rows)
    return _manifest(cfg, "prototypes", {"prototypes": protos, "coverage": coverage(ds, recs)})


def cmd_axes(cfg):
    ds = _dataset(cfg)
    _, recs = _load_prototypes(cfg, ds)
    out = _out(cfg)
    entries, rows = [], []
    for rec in recs:
        entry = {"id": rec.id}
        if rec.coord_sphere.radius <= cfg.min_coord_radius:
            entry["skipped"] = "coordinate sphere has (near) zero radius"
            entries.append(entry)
            continue
        try:
            ax = principal_axis(rec, cfg=cfg.pipeline(), seed=cfg.seed + rec.id)
            outward = outward_length(rec.context, ax.axis_point, ax.rho_axis.total_euclid)
        except DiffsimError as exc:
            entry["error"] = f"{type(exc).__name__}: {exc}"
            entries.append(entry)
            continue
        write_curve(out / "curves" / f"rho_p{rec.id}_in.csv", ax.rho_axis)
        write_curve(out / "curves" / f"rho_p{rec.id}_out.csv", outward)
        entry.update(axis_point=ax.axis_point, fast_point=ax.fast_point, mode=ax.mode, stalled=ax.stalled,
                     fast_length=ax.fast_length, refined_length=ax.refined_length,
                     euclid_in=ax.rho_axis.total_euclid, riem_in=ax.rho_axis.total_riem,
                     riem_out=outward.total_riem, euclid_out=outward.total_euclid)
        entries.append(entry)
        rows.append([rec.id, entry["euclid_in"], entry["riem_in"], entry["riem_out"]])
    write_table(out / "table2.csv", ["prototype", "euclid_inward", "riem_inward", "riem_outward"], rows)
    return _manifest(cfg, "axes", {"axes": entries})


def cmd_geodesics(cfg):
    ds = _dataset(cfg)
    _, recs = _load_prototypes(cfg, ds)
    axes = {a["id"]: a for a in _require(cfg, "axes")["axes"]}
    out = _out(cfg)
    result, t3, t4 = [], [], []
    for rec in recs:
        ax = axes.get(rec.id, {})
        if "axis_point" not in ax:
            continue
        axis_point = np.array(ax["axis_point"])
        try:
            frame = build_frame_at_axis(rec, rec.context, axis_point, seed=cfg.seed + rec.id,
                                        zeta_count=cfg.zeta_count or None)
        except DiffsimError as exc:
            result.append({"id": rec.id, "error": f"{type(exc).__name__}: {exc}"})
            continue
        count = len(frame.directions) - 1 if cfg.directions == 0 else min(cfg.directions, len(frame.directions) - 1)
        geodesic_batch(frame, rec.context, directions=range(count + 1), stop_angle=cfg.stop_angle)
        curves = []
        for (d, sense), g in sorted(frame.geodesics.items()):
            tag = "pos" if sense > 0 else "neg"
            row = {"direction": d, "sense": sense, "complete": g.ok, "error": g.error}
            if g.path is not None:
                write_curve(out / "curves" / f"geo_p{rec.id}_d{d}_{tag}.csv", g.path)
                row.update(euclid=g.path.total_euclid, riem=g.path.total_riem,
                           recenters=len(g.path.center_history) - 1, tangency=g.path.tangency)
            curves.append(row)
        # inward drift lengths from the maximal curve's end points, next to the axis value
        ends = []
        for sense in (1, -1):
            g = frame.geodesics[(0, sense)]
            if g.ok:
                try:
                    ends.append(rho_curve(rec.context, g.path.end).total_riem)
                except DiffsimError:
                    pass
        vals = [ax["riem_in"]] + ends
        spread = (max(vals) - min(vals)) / float(np.mean(vals)) if len(vals) > 1 else None
        for d in range(count + 1):
            p, q, tot = frame.distance_row(d)
            (t3 if d == 0 else t4).append([rec.id, d, p, q, tot] if d else [rec.id, p, q])
        result.append({"id": rec.id, "center_axis": frame.center_axis, "eigenvalues": list(frame.eigenvalues),
                       "directions": frame.directions, "curves": curves, "endpoint_riem_in": ends,
                       "axis_riem_in": ax["riem_in"], "riem_spread": spread})
    write_table(out / "table3.csv", ["prototype", "positive", "negative"], t3)
    write_table(out / "table4.csv", ["prototype", "curve", "positive", "negative", "total"], t4)
    return _manifest(cfg, "geodesics", {"frames": result})


def _rows(frame_doc):
    rows = {}
    for c in frame_doc["curves"]:
        val = c["riem"] if c["complete"] else math.inf
        rows.setdefault(c["direction"], {})[c["sense"]] = val
    return {d: (v.get(1, math.inf), v.get(-1, math.inf)) for d, v in rows.items()}


def cmd_coords(cfg):
    geo = _require(cfg, "geodesics")
    out = _out(cfg)
    chosen, t5 = [], []
    for fr in geo["frames"]:
        if "curves" not in fr:
            continue
        rows = _rows(fr)
        totals = {d: p + q for d, (p, q) in rows.items() if d > 0}
        try:
            mins = rank_minimal(totals, cfg.k - 2)
        except ValueError as exc:
            chosen.append({"id": fr["id"], "error": str(exc)})
            continue
        chosen.append({"id": fr["id"], "coordinates": ["rho", 0] + mins})
        for d in mins:
            p, q = rows[d]
            t5.append([fr["id"], d, p, q, p + q])
    write_table(out / "table5.csv", ["prototype", "curve", "positive", "negative", "total"], t5)
    return _manifest(cfg, "coords", {"selections": chosen})


def _read_curve(path):
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    n = arr.shape[1] - 4
    return CurvePath(kind="loaded", points=arr[:, 1:1 + n], params=arr[:, 0], euclid_len=arr[:, 1 + n],
                     riem_len=arr[:, 2 + n], centers=arr[:, 3 + n].astype(int))


def cmd_report(cfg):
    ds = _dataset(cfg)
    protos, recs = _load_prototypes(cfg, ds)
    axes = _require(cfg, "axes")
    geo = _require(cfg, "geodesics")
    coords = _require(cfg, "coords")
    out = _out(cfg)
    rep = out / "report"
    rep.mkdir(exist_ok=True)
    tables = {}
    for i in range(1, 6):
        src = out / f"table{i}.csv"
        text = src.read_text()
        (rep / src.name).write_text(text)
        tables[f"table{i}"] = text.splitlines()
    dist_rows = []
    for fr in geo["frames"]:
        for c in fr.get("curves", []):
            dist_rows.append([fr["id"], c["direction"], c["sense"], c.get("euclid", math.nan),
                              c.get("riem", math.nan), int(c["complete"]), c.get("recenters", -1)])
    write_table(rep / "distances.csv", ["prototype", "direction", "sense", "euclid", "riem", "complete",
                                        "recenters"], dist_rows)
    side = int(round(math.sqrt(ds.dim)))
    images = []
    if side * side == ds.dim:
        for rec in recs:
            pca_vecs, pca_vals = pca_baseline(rec.data_sphere, ds, min(6, ds.dim))
            scale = np.max(np.abs(pca_vecs), axis=1, keepdims=True)
            write_pgm(rep / f"pca_p{rec.id}.pgm", tile_grid([0.5 + 0.5 * pca_vecs / scale], side))
            write_table(rep / f"pca_p{rec.id}.csv", ["rank", "eigenvalue"], [[i, v] for i, v in enumerate(pca_vals)])
            images.append(f"pca_p{rec.id}.pgm")
            rho_in = out / "curves" / f"rho_p{rec.id}_in.csv"
            if rho_in.exists():
                seqs = [curve_tiles(_read_curve(rho_in), cfg.tiles),
                        curve_tiles(_read_curve(out / "curves" / f"rho_p{rec.id}_out.csv"), cfg.tiles)]
                write_pgm(rep / f"rho_p{rec.id}.pgm", tile_grid(seqs, side))
                images.append(f"rho_p{rec.id}.pgm")
            sel = next((c for c in coords["selections"] if c["id"] == rec.id and "coordinates" in c), None)
            if sel is not None:
                seqs = []
                for d in sel["coordinates"][1:]:
                    for tag in ("pos", "neg"):
                        f = out / "curves" / f"geo_p{rec.id}_d{d}_{tag}.csv"
                        if f.exists():
                            seqs.append(curve_tiles(_read_curve(f), cfg.tiles))
                if seqs:
                    write_pgm(rep / f"theta_p{rec.id}.pgm", tile_grid(seqs, side))
                    images.append(f"theta_p{rec.id}.pgm")
    summary = {
        "config": dataclasses.asdict(cfg) | {"out": None},
        "config_hash": stage_hash(cfg, "report"),
        "seed": cfg.seed,
        "prototype_count": len(protos["prototypes"]),
        "coverage": protos["coverage"],
        "axes": axes["axes"],
        "frames": [{k: v for k, v in fr.items() if k != "directions"} for fr in geo["frames"]],
        "selections": coords["selections"],
        "tables": tables,
        "images": images,
    }
    (rep / "summary.json").write_text(canonical_json(summary))
    return _manifest(cfg, "report", {"summary": "report/summary.json", "images": images})


def cmd_verify(cfg):
    """Invariant checks on analytic potentials; fails the stage if any check fails."""
    from .verify import run_checks

    checks = run_checks(seed=cfg.seed)
    out = _out(cfg)
    write_json(out / "verify.json", {"seed": cfg.seed, "checks": checks,
                                     "config_hash": stage_hash(cfg, "dataset")})
    failed = [c["name"] for c in checks if not c["passed"]]
    if failed:
        raise StageError("verification failed: " + ", ".join(failed))
    return {"checks": checks}


def cmd_dataset(cfg):
    return cmd_ingest(cfg) if cfg.dataset == "mnist" else cmd_synthetic(cfg)


def cmd_run(cfg):
    for step in (cmd_dataset, cmd_prototypes, cmd_axes, cmd_geodesics, cmd_coords, cmd_report):
        step(cfg)
    return {}


COMMANDS = {
    "ingest": cmd_ingest,
    "synthetic": cmd_synthetic,
    "prototypes": cmd_prototypes,
    "axes": cmd_axes,
    "geodesics": cmd_geodesics,
    "coords": cmd_coords,
    "verify": cmd_verify,
    "report": cmd_report,
    "run": cmd_run,
}


def build_parser():
    ap = argparse.ArgumentParser(prog="diffsim", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", help="key-value config file with a [diffsim] section")
    ap.add_argument("--seed", type=int)
    ap.add_argument("--beta", type=float)
    ap.add_argument("--data-sphere", dest="data_sphere", type=int)
    ap.add_argument("--coord-sphere", dest="coord_sphere", type=int)
    ap.add_argument("--sample", type=int)
    ap.add_argument("--stop-angle", dest="stop_angle", help="radians, or forms like pi/2")
    ap.add_argument("--k", type=int)
    ap.add_argument("--out")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = load_config(args.config, overrides)
        if args.command == "ingest" and cfg.dataset != "mnist":
            cfg = dataclasses.replace(cfg, dataset="mnist")
        if args.command == "synthetic" and cfg.dataset != "synthetic":
            cfg = dataclasses.replace(cfg, dataset="synthetic")
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (StageError, DiffsimError, OSError, ValueError) as exc:
        print(f"stage error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
