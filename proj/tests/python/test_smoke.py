"""Smoke tests for the rastream Python module.

The compiled module directory is injected via PYTHONPATH by ctest; the CLI
binary path arrives in RASTREAM_CLI.
"""

import json
import os
import subprocess

import numpy as np
import pytest

import rastream


def test_region_ops():
    a = rastream.Region(0, 0, 4, 4)
    b = rastream.Region(2, 2, 4, 4)
    c = rastream.intersect(a, b)
    assert (c.x, c.y, c.w, c.h) == (2, 2, 2, 2)
    assert c.area() == 4
    grown = rastream.grow_clamped(c, 1, a)
    assert (grown.x, grown.y, grown.w, grown.h) == (1, 1, 3, 3)
    assert rastream.Region(3, 3, 0, 5).empty()


def test_splitting():
    info = rastream.ImageInfo()
    info.width = 100
    info.height = 80
    scheme = rastream.striped_split(info, 8)
    assert scheme.total() == 8
    assert sum(r.area() for r in scheme.splits) == 100 * 80
    schedule = rastream.assign_splits(8, 2)
    assert schedule.splits_for_rank(0) == [0, 2, 4, 6]
    assert schedule.splits_for_rank(1) == [1, 3, 5, 7]


def test_write_read_round_trip(tmp_path):
    rng = np.random.default_rng(5)
    img = rng.integers(0, 65535, size=(33, 47, 3), dtype=np.uint16)
    path = str(tmp_path / "rt.tif")
    rastream.write_raster(path, img)

    info, back = rastream.read_raster(path)
    assert (info.height, info.width, info.bands) == (33, 47, 3)
    assert back.dtype == np.uint16
    np.testing.assert_array_equal(back, img)

    window = rastream.read_region(path, rastream.Region(5, 7, 10, 12))
    np.testing.assert_array_equal(window, img[7:19, 5:15, :])


def test_pillow_opens_output(tmp_path):
    PIL = pytest.importorskip("PIL.Image")
    img = (np.arange(24 * 31, dtype=np.uint8) % 251).reshape(24, 31, 1)
    path = str(tmp_path / "pil.tif")
    rastream.write_raster(path, img)
    with PIL.open(path) as im:
        assert im.size == (31, 24)
        np.testing.assert_array_equal(np.asarray(im), img[:, :, 0])


def test_run_config(tmp_path):
    out = str(tmp_path / "cfg.tif")
    config = {
        "split": {"strategy": "striped", "count": 4},
        "nodes": {
            "src": {
                "kind": "synthetic",
                "pattern": "random",
                "width": 32,
                "height": 25,
                "bands": 2,
                "sample_type": "u16",
                "seed": 9,
            },
            "blur": {"kind": "smooth", "radius": 1, "input": "src"},
            "out": {"kind": "writer", "path": out, "input": "blur"},
        },
    }
    report = rastream.run_config(json.dumps(config), world=2)
    assert report.regions_processed == 4
    info, _ = rastream.read_raster(out)
    assert (info.width, info.height) == (32, 25)

    with pytest.raises(rastream.RastreamError):
        rastream.validate_config("{\"nodes\": {}}")


def test_diff(tmp_path):
    a = tmp_path / "a.bin"
    b = tmp_path / "b.bin"
    a.write_bytes(b"same-bytes")
    b.write_bytes(b"same-bytes")
    assert rastream.diff(str(a), str(b)) is None
    b.write_bytes(b"same-bytEs")
    assert rastream.diff(str(a), str(b)) == 8


def test_cli_gen_and_diff(tmp_path):
    cli = os.environ.get("RASTREAM_CLI")
    if not cli:
        pytest.skip("RASTREAM_CLI not set")
    out = str(tmp_path / "gen.tif")
    subprocess.run(
        [cli, "gen", "checkerboard", "16", "16", "1", out, "--period", "4"],
        check=True,
        capture_output=True,
    )
    info = rastream.read_info(out)
    assert (info.width, info.height) == (16, 16)
    result = subprocess.run([cli, "diff", out, out], capture_output=True, text=True)
    assert result.returncode == 0
    assert "identical" in result.stdout
