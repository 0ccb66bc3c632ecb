"""Minimal PLY reader/writer for point clouds and triangle meshes.

Supports the ``ascii`` and ``binary_little_endian`` formats, scalar vertex
properties of any standard type and a ``vertex_indices`` list property on
faces.  Vertex normals (``nx ny nz``) and per-vertex ``quality`` are
optional.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .covariance import InvalidInputError

__all__ = ["PlyError", "PlyData", "load_ply", "save_ply"]

_TYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


class PlyError(InvalidInputError):
    """Malformed or truncated PLY input."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


@dataclass
class PlyData:
    """Contents of a PLY file.  Absent attributes are ``None``."""

    points: np.ndarray
    normals: np.ndarray | None = None
    faces: np.ndarray | None = None
    quality: np.ndarray | None = None

    @property
    def has_normals(self) -> bool:
        return self.normals is not None


@dataclass
class _Element:
    name: str
    count: int
    props: list  # (name, dtype) or (name, (count_dtype, item_dtype))
    line: int


def _parse_header(lines_iter):
    fmt = None
    elements: list[_Element] = []
    lineno = 0
    for raw in lines_iter:
        lineno += 1
        line = raw.decode("ascii", errors="replace").strip()
        if lineno == 1:
            if line != "ply":
                raise PlyError("missing 'ply' magic", 1)
            continue
        if not line or line.startswith(("comment", "obj_info")):
            continue
        tok = line.split()
        if tok[0] == "format":
            if len(tok) != 3 or tok[1] not in ("ascii", "binary_little_endian"):
                raise PlyError(f"unsupported format {' '.join(tok[1:])!r}", lineno)
            fmt = tok[1]
        elif tok[0] == "element":
            if len(tok) != 3 or not tok[2].isdigit():
                raise PlyError("bad element declaration", lineno)
            elements.append(_Element(tok[1], int(tok[2]), [], lineno))
        elif tok[0] == "property":
            if not elements:
                raise PlyError("property before any element", lineno)
            if tok[1] == "list":
                if len(tok) != 5 or tok[2] not in _TYPES or tok[3] not in _TYPES:
                    raise PlyError("bad list property", lineno)
                elements[-1].props.append((tok[4], (_TYPES[tok[2]], _TYPES[tok[3]])))
            else:
                if len(tok) != 3 or tok[1] not in _TYPES:
                    raise PlyError(f"unknown property type {tok[1]!r}", lineno)
                elements[-1].props.append((tok[2], _TYPES[tok[1]]))
        elif tok[0] == "end_header":
            if fmt is None:
                raise PlyError("missing format line", lineno)
            return fmt, elements, lineno
        else:
            raise PlyError(f"unexpected header keyword {tok[0]!r}", lineno)
    raise PlyError("missing end_header", lineno)


def _read_ascii(f, elements, lineno):
    data = {}
    for el in elements:
        rows = []
        for _ in range(el.count):
            raw = f.readline()
            lineno += 1
            if not raw:
                raise PlyError(f"unexpected end of file in element {el.name!r}", lineno)
            tok = raw.split()
            vals, pos = [], 0
            try:
                for name, dt in el.props:
                    if isinstance(dt, tuple):
                        n = int(tok[pos])
                        vals.append([float(t) for t in tok[pos + 1:pos + 1 + n]])
                        if len(vals[-1]) != n:
                            raise IndexError
                        pos += 1 + n
                    else:
                        vals.append(float(tok[pos]))
                        pos += 1
            except (IndexError, ValueError):
                raise PlyError(f"malformed {el.name} record", lineno) from None
            if pos != len(tok):
                raise PlyError(f"trailing values in {el.name} record", lineno)
            rows.append(vals)
        data[el.name] = rows
    return data


def _read_binary(buf: bytes, elements, lineno):
    data = {}
    off = 0
    for el in elements:
        if all(not isinstance(dt, tuple) for _, dt in el.props):
            dtype = np.dtype([(n, "<" + dt) for n, dt in el.props])
            need = dtype.itemsize * el.count
            if off + need > len(buf):
                raise PlyError(f"truncated binary data in element {el.name!r}", lineno)
            arr = np.frombuffer(buf, dtype=dtype, count=el.count, offset=off)
            off += need
            data[el.name] = [[float(r[n]) for n, _ in el.props] for r in arr]
            continue
        rows = []
        for _ in range(el.count):
            vals = []
            for name, dt in el.props:
                if isinstance(dt, tuple):
                    cdt, idt = np.dtype("<" + dt[0]), np.dtype("<" + dt[1])
                    if off + cdt.itemsize > len(buf):
                        raise PlyError(f"truncated binary data in element {el.name!r}", lineno)
                    n = int(np.frombuffer(buf, cdt, 1, off)[0])
                    off += cdt.itemsize
                    if off + n * idt.itemsize > len(buf):
                        raise PlyError(f"truncated binary data in element {el.name!r}", lineno)
                    vals.append(np.frombuffer(buf, idt, n, off).astype(float).tolist())
                    off += n * idt.itemsize
                else:
                    d = np.dtype("<" + dt)
                    if off + d.itemsize > len(buf):
                        raise PlyError(f"truncated binary data in element {el.name!r}", lineno)
                    vals.append(float(np.frombuffer(buf, d, 1, off)[0]))
                    off += d.itemsize
            rows.append(vals)
        data[el.name] = rows
    return data


def load_ply(path) -> PlyData:
    """Read vertices (with optional normals/quality) and faces from ``path``."""
    with open(path, "rb") as f:
        fmt, elements, lineno = _parse_header(iter(f.readline, b""))
        if fmt == "ascii":
            data = _read_ascii(f, elements, lineno)
        else:
            data = _read_binary(f.read(), elements, lineno)
    vertex = next((e for e in elements if e.name == "vertex"), None)
    if vertex is None:
        raise PlyError("no vertex element")
    names = [n for n, _ in vertex.props]
    for req in ("x", "y", "z"):
        if req not in names:
            raise PlyError(f"vertex element lacks property {req!r}", vertex.line)
    table = np.array(data["vertex"], dtype=float).reshape(vertex.count, len(names))
    col = {n: table[:, i] for i, n in enumerate(names)}
    points = np.column_stack([col["x"], col["y"], col["z"]])
    normals = None
    if all(k in col for k in ("nx", "ny", "nz")):
        normals = np.column_stack([col["nx"], col["ny"], col["nz"]])
    quality = col.get("quality")
    faces = None
    face = next((e for e in elements if e.name == "face"), None)
    if face is not None:
        li = next((i for i, (n, dt) in enumerate(face.props) if isinstance(dt, tuple)), None)
        if li is None:
            raise PlyError("face element lacks a list property", face.line)
        rows = [r[li] for r in data["face"]]
        if any(len(r) != 3 for r in rows):
            raise PlyError("only triangular faces are supported", face.line)
        faces = np.array(rows, dtype=np.int64).reshape(-1, 3)
        if faces.size and (faces.min() < 0 or faces.max() >= points.shape[0]):
            raise PlyError("face index out of range", face.line)
    return PlyData(points, normals, faces, None if quality is None else quality.copy())


def save_ply(path, points, normals=None, faces=None, quality=None, *, binary: bool = False) -> None:
    """Write a point cloud or triangle mesh.

    Coordinates, normals and quality are stored as doubles so a round trip is
    exact.
    """
    P = np.asarray(points, dtype=float).reshape(-1, 3)
    cols = [P]
    props = ["x", "y", "z"]
    if normals is not None:
        cols.append(np.asarray(normals, dtype=float).reshape(-1, 3))
        props += ["nx", "ny", "nz"]
    if quality is not None:
        cols.append(np.asarray(quality, dtype=float).reshape(-1, 1))
        props.append("quality")
    table = np.hstack(cols)
    F = None if faces is None else np.asarray(faces, dtype=np.int64).reshape(-1, 3)

    head = ["ply", f"format {'binary_little_endian' if binary else 'ascii'} 1.0",
            f"element vertex {P.shape[0]}"]
    head += [f"property double {p}" for p in props]
    if F is not None:
        head += [f"element face {F.shape[0]}", "property list uchar int vertex_indices"]
    head.append("end_header")
    header = ("\n".join(head) + "\n").encode("ascii")

    path = Path(path)
    with open(path, "wb") as f:
        f.write(header)
        if binary:
            f.write(table.astype("<f8").tobytes())
            if F is not None:
                rec = np.zeros(F.shape[0], dtype=[("n", "u1"), ("i", "<i4", (3,))])
                rec["n"] = 3
                rec["i"] = F
                f.write(rec.tobytes())
        else:
            for row in table:
                f.write((" ".join(repr(float(v)) for v in row) + "\n").encode("ascii"))
            if F is not None:
                for tri in F:
                    f.write(f"3 {tri[0]} {tri[1]} {tri[2]}\n".encode("ascii"))
