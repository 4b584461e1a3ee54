import json
import os

import numpy as np
import pytest

from cmctrinoid.export import (REPORT_SCHEMA_VERSION, atomic_write, read_obj, read_ply, write_mesh,
                               write_report)
from cmctrinoid.immerse import delaunay_surface


@pytest.fixture(scope="module")
def mesh():
    return delaunay_surface(0.75, xrange=(-3, 3), nx=13, ny=16)


def test_obj_roundtrip(tmp_path, mesh):
    p = tmp_path / "m.obj"
    write_mesh(p, mesh, comment="unduloid\nw = 0.75")
    v, f = read_obj(p)
    assert np.array_equal(v, mesh.vertices)
    assert np.array_equal(f, mesh.triangles())
    head = p.read_text().splitlines()[:2]
    assert head == ["# unduloid", "# w = 0.75"]


def test_ply_roundtrip(tmp_path, mesh):
    p = tmp_path / "m.ply"
    write_mesh(p, mesh)
    v, f = read_ply(p)
    assert np.array_equal(v, mesh.vertices)
    assert np.array_equal(f, mesh.triangles())
    assert p.read_bytes().startswith(b"ply\nformat binary_little_endian 1.0\n")


def test_quads_split_fanwise(mesh):
    t = mesh.triangles()
    q = mesh.quads
    assert t.shape[0] == 2 * q.shape[0]
    assert np.array_equal(t[: q.shape[0]], q[:, [0, 1, 2]])
    assert np.array_equal(t[q.shape[0]:], q[:, [0, 2, 3]])


def test_unknown_extension(tmp_path, mesh):
    with pytest.raises(ValueError):
        write_mesh(tmp_path / "m.stl", mesh)


def test_atomic_write_leaves_nothing_on_error(tmp_path):
    p = tmp_path / "r.json"
    p.write_text("old")
    with pytest.raises(RuntimeError):
        with atomic_write(p) as fh:
            fh.write("partial")
            raise RuntimeError("boom")
    assert p.read_text() == "old"
    assert os.listdir(tmp_path) == ["r.json"]


def test_report_json(tmp_path):
    p = tmp_path / "sub" / "r.json"
    write_report(p, {"a": np.arange(3), "b": np.float64(np.nan), "c": 1 + 2j,
                     "d": {"e": np.bool_(True), 3: np.int64(7)}})
    r = json.loads(p.read_text())
    assert r == {"a": [0, 1, 2], "b": None, "c": [1.0, 2.0], "d": {"e": True, "3": 7},
                 "schema_version": REPORT_SCHEMA_VERSION}
