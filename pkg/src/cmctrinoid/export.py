"""Mesh and report writers.  Every file is written to a temporary sibling
and renamed into place, so readers never see a partial file."""

from __future__ import annotations

import contextlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np

REPORT_SCHEMA_VERSION = "1.0"


@contextlib.contextmanager
def atomic_write(path, mode: str = "w"):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, mode) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _faces(mesh) -> np.ndarray:
    return mesh.triangles() if hasattr(mesh, "triangles") else np.asarray(mesh[1])


def _verts(mesh) -> np.ndarray:
    return np.asarray(mesh.vertices if hasattr(mesh, "vertices") else mesh[0], dtype=float)


def write_obj(path, mesh, comment: str | None = None):
    """ASCII OBJ with 1-based triangle faces."""
    v, f = _verts(mesh), _faces(mesh)
    with atomic_write(path, "w") as fh:
        if comment:
            for line in comment.splitlines():
                fh.write(f"# {line}\n")
        np.savetxt(fh, v, fmt="v %.17g %.17g %.17g")
        np.savetxt(fh, f + 1, fmt="f %d %d %d")


def write_ply(path, mesh):
    """Binary little-endian PLY: double vertices, int32 triangle lists."""
    v, f = _verts(mesh), _faces(mesh)
    header = (
        "ply\nformat binary_little_endian 1.0\n"
        f"element vertex {v.shape[0]}\n"
        "property double x\nproperty double y\nproperty double z\n"
        f"element face {f.shape[0]}\n"
        "property list uchar int vertex_indices\nend_header\n"
    )
    face_rec = np.empty(f.shape[0], dtype=[("n", "u1"), ("idx", "<i4", (3,))])
    face_rec["n"] = 3
    face_rec["idx"] = f
    with atomic_write(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(np.ascontiguousarray(v, dtype="<f8").tobytes())
        fh.write(face_rec.tobytes())


def write_mesh(path, mesh, comment: str | None = None):
    """Dispatch on the extension (.obj or .ply)."""
    ext = Path(path).suffix.lower()
    if ext == ".obj":
        write_obj(path, mesh, comment)
    elif ext == ".ply":
        write_ply(path, mesh)
    else:
        raise ValueError(f"unknown mesh format {ext!r} (use .obj or .ply)")


def read_obj(path):
    """Minimal reader for files written by write_obj."""
    v, f = [], []
    with open(path) as fh:
        for line in fh:
            if line.startswith("v "):
                v.append([float(x) for x in line.split()[1:4]])
            elif line.startswith("f "):
                f.append([int(x.split("/")[0]) - 1 for x in line.split()[1:4]])
    return np.array(v), np.array(f, dtype=np.int64)


def read_ply(path):
    """Reader for the binary layout of write_ply."""
    with open(path, "rb") as fh:
        data = fh.read()
    end = data.index(b"end_header\n") + len(b"end_header\n")
    head = data[:end].decode("ascii").splitlines()
    nv = int(next(h for h in head if h.startswith("element vertex")).split()[-1])
    nf = int(next(h for h in head if h.startswith("element face")).split()[-1])
    v = np.frombuffer(data, dtype="<f8", count=3 * nv, offset=end).reshape(nv, 3)
    rec = np.frombuffer(data, dtype=[("n", "u1"), ("idx", "<i4", (3,))], count=nf, offset=end + 24 * nv)
    return v.copy(), rec["idx"].astype(np.int64)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (complex, np.complexfloating)):
        return [float(x.real), float(x.imag)]
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if np.isfinite(x) else None
    return x


def write_report(path, report: dict):
    report = dict(report)
    report.setdefault("schema_version", REPORT_SCHEMA_VERSION)
    with atomic_write(path, "w") as fh:
        json.dump(_jsonable(report), fh, indent=1)
        fh.write("\n")
