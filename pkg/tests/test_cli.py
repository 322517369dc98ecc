import json
import math

import pytest

from diffsim import cli

SMALL = """[diffsim]
dataset = synthetic
synthetic_kind = gaussian
synthetic_count = 1200
synthetic_dim = 4
synthetic_scale = 0.5
beta = 4.0
beta_coarse = 0.5
data_sphere = 600
coord_sphere = 300
sample = 300
n_starts = 6
max_prototypes = 2
step_one_starts = 12
k = 3
stop_angle = pi/2
"""


@pytest.fixture
def cfg_file(tmp_path):
    p = tmp_path / "cfg.ini"
    p.write_text(SMALL)
    return p


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_parse_angle():
    assert cli.parse_angle("pi/2") == pytest.approx(math.pi / 2)
    assert cli.parse_angle("0.25*pi") == pytest.approx(math.pi / 4)
    assert cli.parse_angle("pi") == pytest.approx(math.pi)
    assert cli.parse_angle("1.2") == 1.2
    with pytest.raises(cli.ConfigError):
        cli.parse_angle("half")


def test_config_errors(tmp_path, cfg_file):
    assert run("run", "--config", tmp_path / "missing.ini") == 2
    bad = tmp_path / "bad.ini"
    bad.write_text("[diffsim]\nunknown_key = 1\n")
    assert run("run", "--config", bad) == 2
    bad.write_text("[other]\nseed = 1\n")
    assert run("run", "--config", bad) == 2
    assert run("run", "--config", cfg_file, "--k", "1", "--out", tmp_path / "o") == 2
    assert run("run", "--config", cfg_file, "--stop-angle", "4", "--out", tmp_path / "o") == 2
    assert run("run", "--config", cfg_file, "--beta", "-1", "--out", tmp_path / "o") == 2


def test_stage_order_and_hash_guard(tmp_path, cfg_file):
    out = tmp_path / "run"
    assert run("axes", "--config", cfg_file, "--out", out) == 3
    assert run("synthetic", "--config", cfg_file, "--out", out) == 0
    assert run("prototypes", "--config", cfg_file, "--out", out) == 0
    # a changed upstream setting makes the stored prototypes stale
    assert run("axes", "--config", cfg_file, "--out", out, "--beta", "2.0") == 2
    assert run("axes", "--config", cfg_file, "--out", out) == 0


def test_full_run_artifacts(tmp_path, cfg_file):
    out = tmp_path / "run"
    assert run("run", "--config", cfg_file, "--out", out, "--seed", 3) == 0
    for name in ("dataset.json", "dataset_cache.f64", "dataset_cache.json", "prototypes.json", "axes.json",
                 "geodesics.json", "coords.json", "report.json", "report/summary.json", "report/distances.csv",
                 "table1.csv", "table2.csv", "table3.csv", "table4.csv", "table5.csv"):
        assert (out / name).exists(), name
    side = json.loads((out / "dataset_cache.json").read_text())
    assert side["count"] == 1200 and side["dim"] == 4 and "provenance" in side
    summary = json.loads((out / "report" / "summary.json").read_text())
    assert summary["seed"] == 3
    assert summary["prototype_count"] >= 1
    header = (out / "curves" / "geo_p0_d0_pos.csv").read_text().splitlines()[0]
    assert header == "t,x1,x2,x3,x4,euclid_len,riem_len,center_axis"
    sel = summary["selections"][0]["coordinates"]
    assert sel[:2] == ["rho", 0] and len(sel) == 3
    # 2x2 patches are square, so PGM grids are written
    assert any(name.endswith(".pgm") for name in summary["images"])


def test_verify_command(tmp_path):
    assert run("verify", "--out", tmp_path / "v") == 0
    doc = json.loads((tmp_path / "v" / "verify.json").read_text())
    assert all(c["passed"] for c in doc["checks"])


def test_ingest_rejects_missing_images(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text(f"[diffsim]\ndataset = mnist\nimages = {tmp_path / 'none.gz'}\n")
    assert run("ingest", "--config", p, "--out", tmp_path / "o") == 2


def test_ingest_small_subset(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text("[diffsim]\ndataset = mnist\nimage_count = 20\nscans_per_image = 3\n")
    assert run("ingest", "--config", p, "--out", tmp_path / "o") == 0
    side = json.loads((tmp_path / "o" / "dataset_cache.json").read_text())
    assert side["count"] == 60 and side["dim"] == 49
