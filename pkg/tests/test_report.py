import json
import math

import numpy as np
import pytest

from diffsim.report import (
    canonical_json,
    config_hash,
    curve_tiles,
    read_pgm,
    tile_grid,
    write_pgm,
    write_table,
)
from diffsim.curves import CurvePath


def test_canonical_json_is_sorted_and_clean():
    text = canonical_json({"b": np.float64(1.5), "a": [np.int64(2), math.nan], "c": np.arange(2)})
    assert json.loads(text) == {"a": [2, None], "b": 1.5, "c": [0, 1]}
    assert text.index('"a"') < text.index('"b"')
    assert text.endswith("\n")


def test_config_hash_ignores_key_order():
    assert config_hash({"x": 1, "y": 2.0}) == config_hash({"y": 2.0, "x": 1})
    assert config_hash({"x": 1}) != config_hash({"x": 2})


def test_table_round_trips_floats(tmp_path):
    v = 0.1 + 0.2
    write_table(tmp_path / "t.csv", ["a", "b"], [[1, v]])
    assert (tmp_path / "t.csv").read_text() == f"a,b\n1,{v!r}\n"


def test_pgm_round_trip(tmp_path):
    img = tile_grid([np.linspace(0, 1, 18).reshape(2, 9)], 3)
    assert img.shape == (5, 9) and img.dtype == np.uint8
    assert img[0, 0] == 128 and img[1, 1] == 0 and img[3, 7] == 255
    write_pgm(tmp_path / "g.pgm", img)
    raw = (tmp_path / "g.pgm").read_bytes()
    assert raw.startswith(b"P5\n9 5\n255\n")
    np.testing.assert_array_equal(read_pgm(tmp_path / "g.pgm"), img)
    with pytest.raises(ValueError):
        (tmp_path / "bad.pgm").write_bytes(b"P2\n1 1\n255\n0")
        read_pgm(tmp_path / "bad.pgm")


def test_curve_tiles_spans_the_curve():
    pts = np.arange(10.0)[:, None] * np.ones((1, 4))
    c = CurvePath("rho", pts, np.arange(10.0), np.arange(10.0), np.arange(10.0))
    tiles = curve_tiles(c, 4)
    np.testing.assert_array_equal(tiles[:, 0], [0, 3, 6, 9])
