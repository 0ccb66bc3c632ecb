"""Zero-level surface extraction from a queried distance field.

The field is sampled on a regular grid and signed using the stored
surface normals.  The zero crossing is then polygonized (marching squares
in 2D, marching cubes in 3D).  Edge crossings are refined with one Newton step
along the edge using the queried gradient (Hermite data).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree
from skimage import measure

from .covariance import InvalidInputError
from .field import INSIDE, OUTSIDE, UNKNOWN, FieldEstimates, _signs
from .ply import save_ply

__all__ = [
    "GridSpec",
    "Mesh",
    "SignedGrid",
    "sample_signed_grid",
    "extract_iso",
    "propagate_signs",
    "node_signs",
    "SIGN_MODES",
    "write_contour_csv",
    "DEGENERATE_AREA",
]

logger = logging.getLogger(__name__)

DEGENERATE_AREA = 1e-12


@dataclass(frozen=True)
class GridSpec:
    """Axis-aligned grid of ``counts`` nodes per axis starting at ``origin``."""

    origin: tuple
    cell_size: float
    counts: tuple

    def __post_init__(self):
        object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))
        object.__setattr__(self, "counts", tuple(int(v) for v in self.counts))
        if len(self.origin) != len(self.counts) or len(self.counts) not in (2, 3):
            raise InvalidInputError("grid must be 2D or 3D with matching origin and counts")
        if not self.cell_size > 0:
            raise InvalidInputError("cell_size must be > 0")
        if min(self.counts) < 2:
            raise InvalidInputError("need at least 2 nodes per axis")

    @classmethod
    def covering(cls, lo, hi, cell_size: float) -> "GridSpec":
        """Smallest grid with spacing ``cell_size`` whose nodes span ``[lo, hi]``."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        counts = np.maximum(2, np.ceil((hi - lo) / cell_size - 1e-9).astype(int) + 1)
        return cls(tuple(lo), cell_size, tuple(counts))

    @property
    def dim(self) -> int:
        return len(self.counts)

    @property
    def n_nodes(self) -> int:
        return int(np.prod(self.counts))

    def axes(self):
        return [o + self.cell_size * np.arange(n) for o, n in zip(self.origin, self.counts)]

    def nodes(self) -> np.ndarray:
        """Node positions, C-ordered over ``counts`` (``ij`` indexing)."""
        mesh = np.meshgrid(*self.axes(), indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])


@dataclass
class Mesh:
    """Triangle mesh (3D) or polyline segment set (2D) with per-vertex variance."""

    vertices: np.ndarray
    faces: np.ndarray
    vertex_variance: np.ndarray

    @property
    def dim(self) -> int:
        return self.vertices.shape[1]

    @property
    def is_empty(self) -> bool:
        return self.faces.shape[0] == 0

    @classmethod
    def empty(cls, dim: int) -> "Mesh":
        k = 3 if dim == 3 else 2
        return cls(np.zeros((0, dim)), np.zeros((0, k), dtype=np.int64), np.zeros(0))

    def face_areas(self) -> np.ndarray:
        if self.dim != 3:
            raise InvalidInputError("face areas are defined for 3D meshes")
        a, b, c = (self.vertices[self.faces[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def edge_face_counts(self) -> dict:
        """Number of faces bordering each undirected edge (3D)."""
        f = self.faces
        e = np.sort(np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]), axis=1)
        keys, counts = np.unique(e, axis=0, return_counts=True)
        return {tuple(k): int(c) for k, c in zip(keys, counts)}

    def polylines(self) -> list[np.ndarray]:
        """Chain 2D segments into vertex-index polylines (closed loops repeat the start)."""
        if self.dim != 2:
            raise InvalidInputError("polylines are defined for 2D contours")
        adj: dict[int, list[int]] = {}
        for a, b in self.faces:
            adj.setdefault(int(a), []).append(int(b))
            adj.setdefault(int(b), []).append(int(a))
        seen_edges = set()
        out = []

        def walk(start):
            line = [start]
            cur = start
            while True:
                nxt = None
                for n in adj[cur]:
                    key = (min(cur, n), max(cur, n))
                    if key not in seen_edges:
                        seen_edges.add(key)
                        nxt = n
                        break
                if nxt is None:
                    return line
                line.append(nxt)
                cur = nxt
                if cur == start:
                    return line

        # Open chains first (start at endpoints), then closed loops.
        for v in sorted(adj):
            if len(adj[v]) == 1 and any((min(v, n), max(v, n)) not in seen_edges for n in adj[v]):
                out.append(np.array(walk(v)))
        for v in sorted(adj):
            if any((min(v, n), max(v, n)) not in seen_edges for n in adj[v]):
                out.append(np.array(walk(v)))
        return out

    def save_ply(self, path, *, binary: bool = False) -> None:
        if self.dim != 3:
            raise InvalidInputError("PLY output is for 3D meshes; use write_contour_csv in 2D")
        save_ply(path, self.vertices, faces=self.faces, quality=self.vertex_variance,
                 binary=binary)


@dataclass
class SignedGrid:
    """Field estimates on a grid with recovered (and propagated) signs."""

    grid: GridSpec
    estimates: FieldEstimates
    sign: np.ndarray  # grid-shaped, +1 / -1 after propagation
    raw_sign: np.ndarray  # grid-shaped, before propagation (0 = unknown)

    @property
    def values(self) -> np.ndarray:
        """Signed distance at each node, shaped like the grid."""
        return self.sign * self.estimates.distance.reshape(self.grid.counts)


SIGN_MODES = ("normal", "sensor")


def _sensor_positions(sensor_track, dim):
    if sensor_track is None:
        return None
    pos = [getattr(s, "translation", s) for s in sensor_track]
    if not pos:
        return None
    return np.asarray(pos, dtype=float).reshape(-1, dim)


def node_signs(source, X, est: FieldEstimates, sensor_track=None, mode: str = "normal") -> np.ndarray:
    """Inside (-1) / outside (+1) / unknown (0) class of each query.

    Signs already present in ``est`` are kept.  Otherwise, in ``"normal"``
    mode the query is projected onto the surface along the estimated
    gradient, ``p = x - d g``, and the sign is that of ``g . n`` with ``n``
    the stored normal nearest to ``p``.  ``"sensor"`` mode uses the nearest
    position of ``sensor_track`` instead: outside when ``g`` points toward
    it.  Normal mode falls back to sensor mode for sources without stored
    normals.
    """
    if mode not in SIGN_MODES:
        raise InvalidInputError(f"sign mode must be one of {SIGN_MODES}")
    X = np.asarray(X, dtype=float)
    sign = np.asarray(est.sign, dtype=int).copy()
    todo = sign == UNKNOWN
    if not todo.any():
        return sign
    Xs, g, d = X[todo], est.gradient[todo], est.distance[todo]
    ref = None
    if mode == "normal" and getattr(source, "n_points", 0) and hasattr(source, "normals_near"):
        foot = Xs - d[:, None] * np.nan_to_num(g)
        ref = Xs + source.normals_near(foot)
    else:
        pos = _sensor_positions(sensor_track, X.shape[1])
        if pos is not None:
            ref = pos[cKDTree(pos).query(Xs)[1]]
    if ref is not None:
        sign[todo] = _signs(Xs, g, ref)
    return sign


class _Signer:
    """Queries a source and signs the result (bound sign options)."""

    def __init__(self, source, sensor_track, mode, hermite=True):
        self.source = source
        self.track = sensor_track
        self.mode = mode
        self.hermite = hermite

    def __call__(self, X) -> FieldEstimates:
        est = self.source.query_batch(X)
        return replace(est, sign=node_signs(self.source, X, est, self.track, self.mode))


def propagate_signs(sign: np.ndarray) -> np.ndarray:
    """Fill unknown (0) signs by the majority of face-adjacent known signs.

    Updates are synchronous so the result does not depend on traversal
    order.  Nodes still unknown at the fixpoint become positive.
    """
    s = np.asarray(sign, dtype=np.int8).copy()
    while True:
        unknown = s == 0
        if not unknown.any():
            break
        pos = np.zeros(s.shape, dtype=np.int16)
        neg = np.zeros(s.shape, dtype=np.int16)
        for ax in range(s.ndim):
            for shift in (1, -1):
                nb = np.zeros_like(s)
                src = [slice(None)] * s.ndim
                dst = [slice(None)] * s.ndim
                if shift == 1:
                    src[ax], dst[ax] = slice(None, -1), slice(1, None)
                else:
                    src[ax], dst[ax] = slice(1, None), slice(None, -1)
                nb[tuple(dst)] = s[tuple(src)]
                pos += nb > 0
                neg += nb < 0
        fill = unknown & (pos != neg)
        if not fill.any():
            break
        s[fill] = np.where(pos[fill] > neg[fill], OUTSIDE, INSIDE)
    s[s == 0] = OUTSIDE
    return s


def sample_signed_grid(source, grid: GridSpec, sensor_track=None, *,
                       sign_mode: str = "normal") -> SignedGrid:
    """Query ``source`` (a map or oracle field) at every grid node and fix signs.

    Signs come from :func:`node_signs`; unknown ones are filled by
    :func:`propagate_signs`.  Nodes at zero distance count as inside so that
    the surface lies between node classes.
    """
    X = grid.nodes()
    if X.shape[1] != getattr(source, "dim", X.shape[1]):
        raise InvalidInputError("grid dimension does not match the field")
    est = _Signer(source, sensor_track, sign_mode)(X)
    raw = est.sign.reshape(grid.counts).astype(np.int8)
    sign = propagate_signs(raw)
    zero = est.distance.reshape(grid.counts) == 0
    sign[zero] = INSIDE
    return SignedGrid(grid, est, sign, raw)


# ---------------------------------------------------------------------------
# Hermite refinement


def _refine(signer, A, B, sa, sb):
    """Crossing parameters ``t`` in [0, 1] on edges ``A -> B`` (``sa <= 0 < sb``)."""
    denom = sa - sb
    t_lin = np.where(denom != 0, sa / np.where(denom != 0, denom, 1.0), 0.5)
    t_lin = np.clip(t_lin, 0.0, 1.0)
    if A.shape[0] == 0 or not signer.hermite:
        return t_lin
    X0 = A + t_lin[:, None] * (B - A)
    est = signer(X0)
    s = np.where(est.sign == UNKNOWN, 0, est.sign)
    s0 = s * est.distance
    g = s[:, None] * est.gradient
    slope = np.einsum("ij,ij->i", g, B - A)
    ok = (s != 0) & ~est.clamped & np.isfinite(slope) & (slope > 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t_new = t_lin - s0 / slope
    ok &= (t_new >= 0.0) & (t_new <= 1.0)
    return np.where(ok, t_new, t_lin)


def _vertex_variance(source, V):
    if V.shape[0] == 0:
        return np.zeros(0)
    return source.query_batch(V).variance.copy()


# ---------------------------------------------------------------------------
# marching squares


_EDGES_2D = ((0, 1), (1, 2), (3, 2), (0, 3))  # bottom, right, top, left (corner ids)
# Corner order: 0 = (i, j), 1 = (i+1, j), 2 = (i+1, j+1), 3 = (i, j+1).
_CORNER_OFFS = ((0, 0), (1, 0), (1, 1), (0, 1))


def _marching_squares(values: np.ndarray, inside: np.ndarray):
    """Segments as pairs of global edge keys ``(axis, i, j)``."""
    nx, ny = values.shape
    segs = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            c_in = [inside[i + di, j + dj] for di, dj in _CORNER_OFFS]
            if all(c_in) or not any(c_in):
                continue
            cut = [e for e, (a, b) in enumerate(_EDGES_2D) if c_in[a] != c_in[b]]

            def key(e):
                a, b = _EDGES_2D[e]
                (ai, aj), (bi, bj) = _CORNER_OFFS[a], _CORNER_OFFS[b]
                axis = 0 if aj == bj else 1
                return (axis, i + min(ai, bi), j + min(aj, bj))

            if len(cut) == 2:
                segs.append((key(cut[0]), key(cut[1])))
                continue
            # Saddle: the asymptotic decider compares the bilinear
            # interpolant at its saddle point with the iso-value.
            v = [values[i + di, j + dj] for di, dj in _CORNER_OFFS]
            den = v[0] + v[2] - v[1] - v[3]
            centre_in = c_in[0] if den == 0 else ((v[0] * v[2] - v[1] * v[3]) / den <= 0)
            if centre_in == c_in[0]:
                # Corners 0 and 2 connected: isolate corners 1 and 3.
                segs.append((key(0), key(1)))
                segs.append((key(2), key(3)))
            else:
                segs.append((key(3), key(0)))
                segs.append((key(1), key(2)))
    return segs


def _extract_2d(signer, sg: SignedGrid) -> Mesh:
    grid = sg.grid
    vals = sg.values
    inside = sg.sign < 0
    segs = _marching_squares(vals, inside)
    if not segs:
        logger.info("no sign change on the grid; contour is empty")
        return Mesh.empty(2)
    keys = sorted({k for s in segs for k in s})
    index = {k: n for n, k in enumerate(keys)}
    origin = np.asarray(grid.origin)
    h = grid.cell_size
    K = np.array(keys)
    ia = K[:, 1:].copy()
    ib = ia.copy()
    ib[np.arange(len(K)), K[:, 0]] += 1
    A = origin + h * ia
    B = origin + h * ib
    va = vals[ia[:, 0], ia[:, 1]]
    vb = vals[ib[:, 0], ib[:, 1]]
    a_in = inside[ia[:, 0], ia[:, 1]]
    # Orient every edge from its inside end to its outside end.
    A2 = np.where(a_in[:, None], A, B)
    B2 = np.where(a_in[:, None], B, A)
    sa = np.where(a_in, va, vb)
    sb = np.where(a_in, vb, va)
    sa = np.minimum(sa, 0.0)
    sb = np.maximum(sb, np.finfo(float).tiny)
    t = _refine(signer, A2, B2, sa, sb)
    V = A2 + t[:, None] * (B2 - A2)
    faces = np.array([(index[a], index[b]) for a, b in segs], dtype=np.int64)
    return Mesh(V, faces, _vertex_variance(signer.source, V))


# ---------------------------------------------------------------------------
# marching cubes


def _extract_3d(signer, sg: SignedGrid) -> Mesh:
    grid = sg.grid
    inside = sg.sign < 0
    if inside.all() or not inside.any():
        logger.info("no sign change on the grid; mesh is empty")
        return Mesh.empty(3)
    vals = sg.values
    # Zero-distance nodes are inside; nudge them below the iso-value so the
    # polygonizer sees the same classification.
    vol = np.where(inside, np.minimum(vals, -np.finfo(float).tiny), np.maximum(vals, np.finfo(float).tiny))
    verts, faces, _, _ = measure.marching_cubes(vol, level=0.0, method="lewiner",
                                                allow_degenerate=False,
                                                gradient_direction="descent")
    if faces.shape[0] == 0:
        return Mesh.empty(3)
    # Every vertex lies on a grid edge: two index coordinates are integral.
    idx = np.asarray(verts, dtype=float)
    frac = np.abs(idx - np.round(idx))
    axis = np.argmax(frac, axis=1)
    ia = np.round(idx).astype(int)
    rows = np.arange(idx.shape[0])
    ia[rows, axis] = np.floor(idx[rows, axis]).astype(int)
    hi = np.array(grid.counts) - 1
    over = ia[rows, axis] >= hi[axis]
    ia[rows[over], axis[over]] = hi[axis[over]] - 1
    ib = ia.copy()
    ib[rows, axis] += 1
    origin = np.asarray(grid.origin)
    h = grid.cell_size
    A = origin + h * ia
    B = origin + h * ib
    a_in = inside[tuple(ia.T)]
    b_in = inside[tuple(ib.T)]
    crossing = a_in != b_in
    A2 = np.where(a_in[:, None], A, B)
    B2 = np.where(a_in[:, None], B, A)
    va, vb = vol[tuple(ia.T)], vol[tuple(ib.T)]
    sa = np.where(a_in, va, vb)
    sb = np.where(a_in, vb, va)
    t = _refine(signer, A2[crossing], B2[crossing], sa[crossing], sb[crossing])
    V = origin + h * idx
    V[crossing] = A2[crossing] + t[:, None] * (B2[crossing] - A2[crossing])
    mesh = Mesh(V, faces.astype(np.int64), np.zeros(V.shape[0]))
    mesh = _drop_degenerate(mesh)
    mesh.vertex_variance = _vertex_variance(signer.source, mesh.vertices)
    return mesh


def _drop_degenerate(mesh: Mesh) -> Mesh:
    keep = mesh.face_areas() > DEGENERATE_AREA
    faces = mesh.faces[keep]
    used = np.unique(faces)
    remap = np.full(mesh.vertices.shape[0], -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    return Mesh(mesh.vertices[used], remap[faces], mesh.vertex_variance[used])


def extract_iso(source, grid: GridSpec, sensor_track=None, *, signed: SignedGrid | None = None,
                sign_mode: str = "normal", hermite: bool = True) -> Mesh:
    """Zero-level contour (2D) or triangle mesh (3D) of ``source`` on ``grid``.

    Parameters
    ----------
    source
        A :class:`~loggpis.map.ClusterMap` or any object with a matching
        ``query_batch(X)`` method.
    grid : GridSpec
    sensor_track : sequence of poses or positions, optional
        Used for sign recovery in ``"sensor"`` mode.
    signed : SignedGrid, optional
        A previously sampled grid to reuse.
    sign_mode : {"normal", "sensor"}
        See :func:`node_signs`.
    hermite : bool
        Refine edge crossings with the queried gradient; ``False`` keeps the
        linear interpolation of node values.
    """
    sg = signed if signed is not None else sample_signed_grid(source, grid, sensor_track,
                                                              sign_mode=sign_mode)
    signer = _Signer(source, sensor_track, sign_mode, hermite)
    if grid.dim == 2:
        return _extract_2d(signer, sg)
    return _extract_3d(signer, sg)


def write_contour_csv(path, mesh: Mesh) -> None:
    """One row per polyline vertex: ``polyline,x,y,variance``."""
    lines = ["polyline,x,y,variance"]
    if not mesh.is_empty:
        for k, line in enumerate(mesh.polylines()):
            for v in line:
                x, y = mesh.vertices[v]
                lines.append(f"{k},{float(x)!r},{float(y)!r},{float(mesh.vertex_variance[v])!r}")
    Path(path).write_text("\n".join(lines) + "\n")

