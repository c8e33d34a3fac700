"""Minimal PLY reader/writer (ascii and binary_little_endian vertices)."""

from __future__ import annotations

import os

import numpy as np

from .pointcloud import PointCloud

_TYPES = {
    "char": "i1", "int8": "i1",
    "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2",
    "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4",
    "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4",
    "double": "f8", "float64": "f8",
}


class PlyError(ValueError):
    pass


def _parse_header(fh):
    magic = fh.readline().strip()
    if magic != b"ply":
        raise PlyError("missing 'ply' magic")
    fmt = None
    elements = []
    comments = []
    while True:
        raw = fh.readline()
        if not raw:
            raise PlyError("unterminated header")
        words = raw.decode("ascii", errors="replace").split()
        if not words:
            continue
        key = words[0]
        if key == "end_header":
            break
        if key == "format":
            if len(words) < 2:
                raise PlyError("bad format line")
            fmt = words[1]
        elif key in ("comment", "obj_info"):
            comments.append(" ".join(words[1:]))
        elif key == "element":
            if len(words) != 3:
                raise PlyError(f"bad element line: {raw!r}")
            elements.append((words[1], int(words[2]), []))
        elif key == "property":
            if not elements:
                raise PlyError("property before element")
            if words[1] == "list":
                elements[-1][2].append((words[-1], None))
            else:
                if len(words) != 3 or words[1] not in _TYPES:
                    raise PlyError(f"bad property line: {raw!r}")
                elements[-1][2].append((words[2], _TYPES[words[1]]))
        else:
            raise PlyError(f"unknown header keyword {key!r}")
    if fmt not in ("ascii", "binary_little_endian"):
        raise PlyError(f"unsupported PLY format {fmt!r}")
    return fmt, elements, comments


def load_ply(path) -> PointCloud:
    """Read vertices (x, y, z and optional red, green, blue) into a voxel cloud."""
    with open(path, "rb") as fh:
        fmt, elements, comments = _parse_header(fh)
        vertex = None
        for name, count, props in elements:
            if name == "vertex":
                vertex = (count, props)
                break
            # skipping preceding elements only works for fixed-size binary rows
            if any(t is None for _, t in props):
                raise PlyError(f"cannot skip list element {name!r} before vertices")
            if fmt == "ascii":
                for _ in range(count):
                    fh.readline()
            else:
                fh.seek(count * np.dtype([(p, "<" + t) for p, t in props]).itemsize, os.SEEK_CUR)
        if vertex is None:
            raise PlyError("no vertex element")
        count, props = vertex
        if any(t is None for _, t in props):
            raise PlyError("list properties on vertices are not supported")
        names = [p for p, _ in props]
        for axis in "xyz":
            if axis not in names:
                raise PlyError(f"vertex property {axis!r} missing")
        if fmt == "ascii":
            rows = [fh.readline().split() for _ in range(count)]
            if any(len(r) < len(names) for r in rows):
                raise PlyError("truncated ascii vertex data")
            table = np.array(rows, dtype=np.float64).reshape(count, len(names))
            cols = {n: table[:, i] for i, n in enumerate(names)}
        else:
            dtype = np.dtype([(p, "<" + t) for p, t in props])
            buf = fh.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise PlyError("truncated binary vertex data")
            rec = np.frombuffer(buf, dtype=dtype, count=count)
            cols = {n: rec[n] for n in names}
    xyz = np.stack([cols[a].astype(np.float64) for a in "xyz"], axis=1)
    rgb = None
    if all(c in cols for c in ("red", "green", "blue")):
        rgb = np.stack([cols[c] for c in ("red", "green", "blue")], axis=1)
        rgb = np.clip(np.rint(rgb.astype(np.float64)), 0, 255).astype(np.uint8)
    precision = 0
    for c in comments:
        if c.startswith("precision "):
            try:
                precision = int(c.split()[1])
            except (IndexError, ValueError):
                precision = 0
    cloud = PointCloud.from_points(xyz, rgb)
    if precision > cloud.precision:
        cloud = PointCloud(cloud.points, cloud.colors, precision)
    return cloud


def save_ply(pc: PointCloud, path, ascii: bool = False) -> None:
    """Write a cloud; float32 coordinates are exact for voxel grids below 2**24."""
    n = len(pc)
    ctype = "<f4" if n == 0 or pc.points.max() < 2**24 else "<f8"
    fields = [("x", ctype), ("y", ctype), ("z", ctype)]
    if pc.has_colors:
        fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    rec = np.empty(n, dtype=fields)
    for i, axis in enumerate("xyz"):
        rec[axis] = pc.points[:, i]
    if pc.has_colors:
        for i, c in enumerate(("red", "green", "blue")):
            rec[c] = pc.colors[:, i]
    lines = [
        "ply",
        f"format {'ascii' if ascii else 'binary_little_endian'} 1.0",
        f"comment precision {pc.precision}",
        f"element vertex {n}",
    ] + [f"property {'float' if ctype == '<f4' else 'double'} {a}" for a in "xyz"]
    if pc.has_colors:
        lines += ["property uchar red", "property uchar green", "property uchar blue"]
    lines.append("end_header")
    header = ("\n".join(lines) + "\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        if ascii:
            for row in rec:
                fh.write((" ".join(str(int(v)) for v in row) + "\n").encode("ascii"))
        else:
            fh.write(rec.tobytes())
