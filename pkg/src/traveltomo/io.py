"""File formats: F3D binary fields, legacy VTK export, text manifests."""
from __future__ import annotations

import hashlib
import os
from pathlib import Path

import numpy as np

F3D_MAGIC = "F3D 1"


class FormatError(ValueError):
    pass


def write_f3d(path, values, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)) -> None:
    """Write a field indexed ``[x, y, z]`` or ``[x, y, z, component]``.

    Layout: ASCII header, then little-endian float64 with the component
    index fastest, then x, then y, and z slowest.
    """
    arr = np.asarray(values, dtype=float)
    if arr.ndim == 3:
        arr = arr[..., None]
    if arr.ndim != 4:
        raise FormatError("expected a 3-D scalar or 4-D component array")
    nx, ny, nz, nc = arr.shape
    header = (
        f"{F3D_MAGIC}\n"
        f"dims {nx} {ny} {nz}\n"
        f"spacing {spacing[0]!r} {spacing[1]!r} {spacing[2]!r}\n"
        f"origin {origin[0]!r} {origin[1]!r} {origin[2]!r}\n"
        f"components {nc}\n"
        "end_header\n"
    )
    payload = np.ascontiguousarray(arr.transpose(2, 1, 0, 3)).astype("<f8")
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        fh.write(payload.tobytes())


def read_f3d(path):
    """Return ``(values, spacing, origin)``; scalar fields come back 3-D."""
    with open(path, "rb") as fh:
        lines = [fh.readline().decode("ascii").strip() for _ in range(6)]
        if lines[0] != F3D_MAGIC or lines[5] != "end_header":
            raise FormatError(f"{path}: not an F3D file")
        try:
            dims = tuple(int(v) for v in lines[1].split()[1:])
            spacing = tuple(float(v) for v in lines[2].split()[1:])
            origin = tuple(float(v) for v in lines[3].split()[1:])
            nc = int(lines[4].split()[1])
        except (IndexError, ValueError) as exc:
            raise FormatError(f"{path}: corrupt header") from exc
        raw = fh.read()
    nx, ny, nz = dims
    expected = nx * ny * nz * nc * 8
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} data bytes, found {len(raw)}")
    arr = np.frombuffer(raw, dtype="<f8").reshape(nz, ny, nx, nc).transpose(2, 1, 0, 3)
    arr = np.array(arr, dtype=float)
    if nc == 1:
        arr = arr[..., 0]
    return arr, spacing, origin


def write_vtk(path, fields: dict, spacing, origin=(0.0, 0.0, 0.0), title="traveltomo") -> None:
    """Legacy ASCII STRUCTURED_POINTS file with one SCALARS block per field."""
    shapes = {np.shape(v) for v in fields.values()}
    if len(shapes) != 1:
        raise FormatError("all fields must share one shape")
    nx, ny, nz = shapes.pop()
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\n")
        fh.write(f"{title}\nASCII\nDATASET STRUCTURED_POINTS\n")
        fh.write(f"DIMENSIONS {nx} {ny} {nz}\n")
        fh.write("ORIGIN {} {} {}\n".format(*origin))
        fh.write("SPACING {} {} {}\n".format(*spacing))
        fh.write(f"POINT_DATA {nx * ny * nz}\n")
        for name, vals in fields.items():
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            # VTK point order: x fastest
            flat = np.asarray(vals, dtype=float).transpose(2, 1, 0).ravel()
            for start in range(0, flat.size, 6):
                fh.write(" ".join(f"{v:.10g}" for v in flat[start : start + 6]) + "\n")


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_manifest(path, entries: dict) -> None:
    """Flat ``key = value`` text; keys sorted so the file is reproducible."""
    with open(path, "w") as fh:
        for key in sorted(entries):
            val = entries[key]
            if isinstance(val, (list, tuple, np.ndarray)):
                val = " ".join(repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)
                               for v in val)
            elif isinstance(val, float):
                val = repr(val)
            fh.write(f"{key} = {val}\n")


def read_manifest(path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(path)
    out = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{lineno}: expected 'key = value'")
        key, val = line.split("=", 1)
        out[key.strip()] = val.strip()
    return out


def ensure_dir(path) -> Path:
    p = Path(path)
    os.makedirs(p, exist_ok=True)
    return p
