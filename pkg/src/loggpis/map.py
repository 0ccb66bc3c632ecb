"""Incremental world model: a quadtree/octree of local GPs.

Every leaf owns a set of fused surface points.  Its GP is trained on all
stored points inside the leaf box inflated by ``support_margin``, so
neighbouring clusters overlap and their predictions can be blended across
borders.  Inserting points only marks the affected leaves dirty; models are
rebuilt by :meth:`ClusterMap.refit_dirty`.

The tree is canonical: a node is split exactly when its subtree holds more
than ``leaf_capacity`` points.  Together with a sorted training order this
makes query results a function of the stored point set alone, independent
of insertion order and of whether the map was built incrementally.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .covariance import InvalidInputError, KernelParams
from .field import LATENT_FLOOR, FieldEstimate, FieldEstimates, gpis_transform, log_transform
from .gp import BatchPrediction, IllConditionedError, TrainingBlock, fit, predict_batch

__all__ = [
    "SurfacePoint",
    "ClusterMap",
    "EmptyMapError",
    "InsertReport",
    "fuse_point",
    "METHODS",
    "GRAD_TARGETS",
]

logger = logging.getLogger(__name__)

METHODS = ("loggpis", "gpis")
GRAD_TARGETS = ("scaled", "unit", "none")
MAX_NORMAL_ANGLE_DEG = 60.0
_VAR_FLOOR = 1e-300
_FORMAT = "loggpis-map 1"


class EmptyMapError(RuntimeError):
    """The map has no usable cluster to answer a query."""


@dataclass
class SurfacePoint:
    """A (possibly fused) surface sample with a unit normal facing free space."""

    position: np.ndarray
    normal: np.ndarray
    pos_noise: float
    obs_count: int = 1

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).copy()
        n = np.asarray(self.normal, dtype=float)
        norm = np.linalg.norm(n)
        if not np.isfinite(norm) or norm == 0:
            raise InvalidInputError("surface normal must be non-zero")
        self.normal = n if abs(norm - 1.0) <= 1e-12 else n / norm
        if not self.pos_noise > 0:
            raise InvalidInputError("pos_noise must be > 0")
        if self.obs_count < 1:
            raise InvalidInputError("obs_count must be >= 1")

    @property
    def dim(self) -> int:
        return self.position.shape[0]


def fuse_point(existing: SurfacePoint, incoming: SurfacePoint,
               max_angle_deg: float = MAX_NORMAL_ANGLE_DEG) -> SurfacePoint | None:
    """Inverse-variance fusion of two observations of the same surface point.

    Returns ``None`` when the normals disagree by more than ``max_angle_deg``;
    the caller then keeps both points.
    """
    if not math.isfinite(incoming.pos_noise):
        return existing
    cos = float(np.dot(existing.normal, incoming.normal))
    if cos < math.cos(math.radians(max_angle_deg)):
        return None
    w1 = 1.0 / existing.pos_noise**2
    w2 = 1.0 / incoming.pos_noise**2
    pos = (w1 * existing.position + w2 * incoming.position) / (w1 + w2)
    normal = w1 * existing.normal + w2 * incoming.normal
    return SurfacePoint(pos, normal, math.sqrt(1.0 / (w1 + w2)),
                        existing.obs_count + incoming.obs_count)


@dataclass
class InsertReport:
    inserted: int = 0
    fused: int = 0
    rejected: int = 0


class _Node:
    __slots__ = ("lo", "hi", "depth", "parent", "children", "ids", "count",
                 "model", "dirty", "error")

    def __init__(self, lo, hi, depth, parent):
        self.lo = lo
        self.hi = hi
        self.depth = depth
        self.parent = parent
        self.children = None
        self.ids = []
        self.count = 0
        self.model = None
        self.dirty = True
        self.error = None

    @property
    def is_leaf(self):
        return self.children is None

    def child_for(self, p):
        mid = 0.5 * (self.lo + self.hi)
        k = 0
        for a in range(p.shape[0]):
            if p[a] >= mid[a]:
                k |= 1 << a
        return self.children[k]


@dataclass
class _LeafBatch:
    mean: np.ndarray
    grad: np.ndarray
    var: np.ndarray


class ClusterMap:
    """Spatial tree of local GPs over a fixed arena.

    Parameters
    ----------
    arena_min, arena_max : array_like
        Corners of the mapped region; points outside are rejected.
    params : KernelParams
        Kernel hyperparameters shared by every cluster.
    leaf_capacity : int
        Maximum number of owned points per leaf.
    support_margin : float, optional
        Inflation of each leaf box that defines its training support and the
        region where it answers queries.  Defaults to ``3 / lam``.
    fuse_radius : float
        Incoming points within this radius of a stored point are fused.
    method : {"loggpis", "gpis"}
        ``loggpis`` trains on ``y = 1`` (gradient targets set by
        ``grad_targets``) and reads out ``-ln(f) / lam``; ``gpis`` trains on ``y = 0`` and gradients ``n``
        and reads the mean directly (the standard GPIS baseline).
    latent_floor : float
        Latent means below this value saturate the distance.
    grad_targets : {"scaled", "unit", "none"}
        Latent gradient targets for ``loggpis``: ``-lam n`` (the on-surface
        gradient of ``exp(-lam d)``), ``-n``, or no gradient observations.
        Ignored by ``gpis``.
    """

    def __init__(self, arena_min, arena_max, params: KernelParams, *,
                 leaf_capacity: int = 40, support_margin: float | None = None,
                 fuse_radius: float = 0.015, method: str = "loggpis",
                 latent_floor: float = LATENT_FLOOR, max_depth: int = 24,
                 max_normal_angle: float = MAX_NORMAL_ANGLE_DEG,
                 grad_targets: str = "unit"):
        lo = np.asarray(arena_min, dtype=float)
        hi = np.asarray(arena_max, dtype=float)
        if lo.shape != hi.shape or lo.ndim != 1 or lo.size not in (2, 3):
            raise InvalidInputError("arena bounds must be 2- or 3-vectors")
        if np.any(hi <= lo):
            raise InvalidInputError("arena_max must exceed arena_min")
        if method not in METHODS:
            raise InvalidInputError(f"method must be one of {METHODS}")
        if grad_targets not in GRAD_TARGETS:
            raise InvalidInputError(f"grad_targets must be one of {GRAD_TARGETS}")
        if leaf_capacity < 1:
            raise InvalidInputError("leaf_capacity must be >= 1")
        self.dim = lo.size
        self.params = params
        self.leaf_capacity = int(leaf_capacity)
        self.support_margin = float(3.0 / params.lam if support_margin is None else support_margin)
        self.fuse_radius = float(fuse_radius)
        self.method = method
        self.latent_floor = float(latent_floor)
        self.max_depth = int(max_depth)
        self.max_normal_angle = float(max_normal_angle)
        self.grad_targets = grad_targets
        self.root = _Node(lo, hi, 0, None)
        self.points: dict[int, SurfacePoint] = {}
        self._owner: dict[int, _Node] = {}
        self._next_id = 0
        self._kdtree = None
        self._point_tree = None

    # ------------------------------------------------------------------ tree

    @property
    def arena_min(self):
        return self.root.lo.copy()

    @property
    def arena_max(self):
        return self.root.hi.copy()

    def leaves(self):
        """All leaves in a fixed depth-first child order."""
        out, stack = [], [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                out.append(node)
            else:
                stack.extend(reversed(node.children))
        return out

    def _in_arena(self, p):
        return bool(np.all(p >= self.root.lo) and np.all(p <= self.root.hi))

    def _leaf_for(self, p):
        node = self.root
        while not node.is_leaf:
            node = node.child_for(p)
        return node

    def _split(self, node):
        mid = 0.5 * (node.lo + node.hi)
        node.children = []
        for k in range(1 << self.dim):
            lo = node.lo.copy()
            hi = node.hi.copy()
            for a in range(self.dim):
                if k >> a & 1:
                    lo[a] = mid[a]
                else:
                    hi[a] = mid[a]
            node.children.append(_Node(lo, hi, node.depth + 1, node))
        ids, node.ids, node.model = node.ids, [], None
        for pid in ids:
            child = node.child_for(self.points[pid].position)
            child.ids.append(pid)
            child.count += 1
            self._owner[pid] = child
        for child in node.children:
            if child.count > self.leaf_capacity and child.depth < self.max_depth:
                self._split(child)

    def _collect(self, node):
        if node.is_leaf:
            return list(node.ids)
        out = []
        for c in node.children:
            out.extend(self._collect(c))
        return out

    def _attach(self, pid):
        p = self.points[pid].position
        node = self.root
        node.count += 1
        while not node.is_leaf:
            node = node.child_for(p)
            node.count += 1
        node.ids.append(pid)
        self._owner[pid] = node
        node.dirty = True
        if node.count > self.leaf_capacity and node.depth < self.max_depth:
            self._split(node)

    def _detach(self, pid):
        leaf = self._owner.pop(pid)
        leaf.ids.remove(pid)
        leaf.dirty = True
        node = leaf
        while node is not None:
            node.count -= 1
            node = node.parent
        # Collapse the highest ancestor that no longer needs splitting.
        top, node = None, leaf.parent
        while node is not None:
            if node.count <= self.leaf_capacity:
                top = node
            node = node.parent
        if top is not None:
            ids = self._collect(top)
            top.children = None
            top.ids = ids
            top.model = None
            top.dirty = True
            for i in ids:
                self._owner[i] = top

    def _mark_dirty_around(self, p):
        m = self.support_margin
        stack = [self.root]
        while stack:
            node = stack.pop()
            if np.any(p < node.lo - m) or np.any(p > node.hi + m):
                continue
            if node.is_leaf:
                node.dirty = True
            else:
                stack.extend(node.children)

    def _ids_in_box(self, lo, hi):
        out = []
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.count == 0 or np.any(node.hi < lo) or np.any(node.lo > hi):
                continue
            if node.is_leaf:
                for pid in node.ids:
                    q = self.points[pid].position
                    if np.all(q >= lo) and np.all(q <= hi):
                        out.append(pid)
            else:
                stack.extend(node.children)
        return out

    # --------------------------------------------------------------- updates

    def insert_points(self, points) -> InsertReport:
        """Fuse or insert each point; mark affected clusters dirty."""
        report = InsertReport()
        for sp in points:
            if sp.dim != self.dim:
                raise InvalidInputError(f"point dimension {sp.dim} != map dimension {self.dim}")
            if not self._in_arena(sp.position):
                report.rejected += 1
                continue
            self._kdtree = None
            self._point_tree = None
            if self.fuse_radius > 0 and self._try_fuse(sp):
                report.fused += 1
                continue
            pid = self._next_id
            self._next_id += 1
            self.points[pid] = SurfacePoint(sp.position, sp.normal, sp.pos_noise, sp.obs_count)
            self._attach(pid)
            self._mark_dirty_around(sp.position)
            report.inserted += 1
        if report.rejected:
            logger.warning("rejected %d out-of-arena points", report.rejected)
        return report

    def _try_fuse(self, sp) -> bool:
        r = self.fuse_radius
        cand = self._ids_in_box(sp.position - r, sp.position + r)
        if not cand:
            return False
        dists = [float(np.linalg.norm(self.points[i].position - sp.position)) for i in cand]
        for d, pid in sorted(zip(dists, cand)):
            if d > r:
                break
            old = self.points[pid]
            fused = fuse_point(old, sp, self.max_normal_angle)
            if fused is None:
                continue
            self._mark_dirty_around(old.position)
            self.points[pid] = fused
            if self._leaf_for(fused.position) is not self._owner[pid]:
                self._detach(pid)
                self._attach(pid)
            self._mark_dirty_around(fused.position)
            return True
        return False

    def refit_dirty(self) -> int:
        """Refit every dirty leaf; returns the number of fits performed."""
        n = 0
        for leaf in self.leaves():
            if not leaf.dirty:
                continue
            leaf.dirty = False
            leaf.model = None
            leaf.error = None
            if not leaf.ids:
                continue
            block = self.training_block(leaf)
            try:
                leaf.model = fit(block, self.params)
            except IllConditionedError as exc:
                leaf.error = str(exc)
                logger.error("cluster fit failed: %s", exc)
            n += 1
        if n:
            self._kdtree = None
        return n

    def training_block(self, leaf) -> TrainingBlock:
        """Training observations for ``leaf``: all points in its support box."""
        m = self.support_margin
        ids = self._ids_in_box(leaf.lo - m, leaf.hi + m)
        pts = [self.points[i] for i in ids]
        pts.sort(key=_point_key)
        X = np.array([p.position for p in pts])
        N = np.array([p.normal for p in pts])
        counts = np.array([p.obs_count for p in pts], dtype=float)
        lam = self.params.lam
        if self.method == "loggpis":
            values = np.ones(len(pts))
            grad_scale = lam if self.grad_targets == "scaled" else 1.0
            grads = -grad_scale * N
        else:
            values = np.zeros(len(pts))
            grads = N
            grad_scale = 1.0
        noise = self.params.noise_y / np.sqrt(counts)
        grad_noise = grad_scale * self.params.noise_grad / np.sqrt(counts)
        if not self.params.differentiable or (
                self.method == "loggpis" and self.grad_targets == "none"):
            grads = None
            grad_noise = None
        return TrainingBlock(X, values, grads, noise, grad_noise)

    def rebuild(self) -> "ClusterMap":
        """A fresh map holding the same stored points, fully refit."""
        other = self.empty_like()
        other.insert_points_raw(self.surface_points())
        other.refit_dirty()
        return other

    def empty_like(self, **overrides) -> "ClusterMap":
        kw = dict(leaf_capacity=self.leaf_capacity, support_margin=self.support_margin,
                  fuse_radius=self.fuse_radius, method=self.method,
                  latent_floor=self.latent_floor, max_depth=self.max_depth,
                  max_normal_angle=self.max_normal_angle, grad_targets=self.grad_targets)
        params = overrides.pop("params", self.params)
        kw.update(overrides)
        return ClusterMap(self.root.lo, self.root.hi, params, **kw)

    def insert_points_raw(self, points):
        """Insert points verbatim, bypassing fusion (used when reloading)."""
        saved, self.fuse_radius = self.fuse_radius, 0.0
        try:
            return self.insert_points(points)
        finally:
            self.fuse_radius = saved

    def surface_points(self):
        """Stored points in canonical order."""
        return sorted(self.points.values(), key=_point_key)

    # --------------------------------------------------------------- queries

    @property
    def n_points(self) -> int:
        return len(self.points)

    def health(self) -> dict:
        leaves = self.leaves()
        return {
            "points": self.n_points,
            "leaves": len(leaves),
            "usable": sum(1 for l in leaves if l.model is not None),
            "dirty": sum(1 for l in leaves if l.dirty),
            "errors": [l.error for l in leaves if l.error],
        }

    def _usable(self):
        if any(l.dirty for l in self.leaves()):
            self.refit_dirty()
        return [l for l in self.leaves() if l.model is not None]

    def _nearest_leaf_lookup(self, usable):
        if self._kdtree is None:
            owners, pos = [], []
            index = {id(l): k for k, l in enumerate(usable)}
            for pid, leaf in self._owner.items():
                if id(leaf) in index:
                    owners.append(index[id(leaf)])
                    pos.append(self.points[pid].position)
            self._kdtree = (cKDTree(np.array(pos)), np.array(owners))
        return self._kdtree

    def latent_batch(self, X) -> tuple[BatchPrediction, np.ndarray]:
        """Blended latent predictions and the number of contributing clusters."""
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        usable = self._usable()
        if not usable:
            raise EmptyMapError("map has no usable clusters")
        m = X.shape[0]
        d = self.dim
        sw = np.zeros(m)
        sf = np.zeros(m)
        sg = np.zeros((m, d))
        sv = np.zeros(m)
        ncand = np.zeros(m, dtype=int)
        first = _LeafBatch(np.zeros(m), np.zeros((m, d)), np.zeros(m))
        margin = self.support_margin

        def accumulate(model, idx):
            p = predict_batch(model, X[idx])
            w = 1.0 / np.maximum(p.var, _VAR_FLOOR)
            new = ncand[idx] == 0
            fi = idx[new]
            first.mean[fi] = p.mean[new]
            first.grad[fi] = p.grad_mean[new]
            first.var[fi] = p.var[new]
            sw[idx] += w
            sf[idx] += w * p.mean
            sg[idx] += w[:, None] * p.grad_mean
            sv[idx] += w * p.var
            ncand[idx] += 1

        for leaf in usable:
            inside = np.all((X >= leaf.lo - margin) & (X <= leaf.hi + margin), axis=1)
            idx = np.flatnonzero(inside)
            if idx.size:
                accumulate(leaf.model, idx)

        orphans = np.flatnonzero(ncand == 0)
        if orphans.size:
            tree, owners = self._nearest_leaf_lookup(usable)
            _, nearest = tree.query(X[orphans])
            which = owners[nearest]
            for k in np.unique(which):
                accumulate(usable[k].model, orphans[which == k])

        single = ncand == 1
        mean = np.where(single, first.mean, sf / sw)
        grad = np.where(single[:, None], first.grad, sg / sw[:, None])
        var = np.where(single, first.var, sv / sw)
        return BatchPrediction(mean, grad, var, np.full((m, d, d), np.nan)), ncand

    def query_batch(self, X, sensor_pos=None) -> FieldEstimates:
        """Field estimates at each row of ``X``.

        ``sensor_pos`` (one position, or one per query) enables sign recovery.
        """
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        if X.shape[0] == 0:
            if not self._usable():
                raise EmptyMapError("map has no usable clusters")
            return FieldEstimates.empty(self.dim)
        lat, _ = self.latent_batch(X)
        if self.method == "gpis":
            return gpis_transform(X, lat.mean, lat.grad_mean, lat.var)
        return log_transform(X, lat.mean, lat.grad_mean, lat.var, self.params,
                             sensor_pos, self.latent_floor)

    def query(self, x_star, sensor_pos=None) -> FieldEstimate:
        return self.query_batch(np.asarray(x_star, dtype=float)[None], sensor_pos)[0]

    def normals_near(self, X) -> np.ndarray:
        """Stored normal of the surface point nearest to each row of ``X``."""
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        if not self.points:
            raise EmptyMapError("map holds no points")
        if self._point_tree is None:
            pts = self.surface_points()
            self._point_tree = (cKDTree(np.array([p.position for p in pts])),
                                np.array([p.normal for p in pts]))
        tree, normals = self._point_tree
        _, k = tree.query(X)
        return normals[k]

    # --------------------------------------------------------- serialization

    def save(self, path) -> None:
        """Write stored points plus a key-value header; models are not stored."""
        p = self.params
        header = {
            "dim": self.dim,
            "method": self.method,
            "lambda": p.lam,
            "nu": p.nu,
            "sigma2": p.sigma2,
            "noise_y": p.noise_y,
            "noise_grad": p.noise_grad,
            "arena_min": " ".join(repr(float(v)) for v in self.root.lo),
            "arena_max": " ".join(repr(float(v)) for v in self.root.hi),
            "leaf_capacity": self.leaf_capacity,
            "support_margin": repr(self.support_margin),
            "fuse_radius": repr(self.fuse_radius),
            "latent_floor": repr(self.latent_floor),
            "max_depth": self.max_depth,
            "max_normal_angle": repr(self.max_normal_angle),
            "grad_targets": self.grad_targets,
            "points": self.n_points,
        }
        lines = [f"# {_FORMAT}"]
        lines += [f"{k} = {v}" for k, v in header.items()]
        lines.append("end_header")
        for sp in self.surface_points():
            vals = list(sp.position) + list(sp.normal) + [sp.pos_noise]
            lines.append(" ".join(repr(float(v)) for v in vals) + f" {sp.obs_count}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path) -> "ClusterMap":
        """Read a map file and refit every cluster."""
        text = Path(path).read_text().splitlines()
        if not text or not text[0].startswith("#") or _FORMAT not in text[0]:
            raise InvalidInputError(f"{path}: not a map file")
        header = {}
        i = 1
        while i < len(text) and text[i].strip() != "end_header":
            key, _, val = text[i].partition("=")
            header[key.strip()] = val.strip()
            i += 1
        if i == len(text):
            raise InvalidInputError(f"{path}: missing end_header")
        try:
            dim = int(header["dim"])
            params = KernelParams(lam=float(header["lambda"]), nu=float(header["nu"]),
                                  sigma2=float(header["sigma2"]),
                                  noise_y=float(header["noise_y"]),
                                  noise_grad=float(header["noise_grad"]))
            m = cls([float(v) for v in header["arena_min"].split()],
                    [float(v) for v in header["arena_max"].split()], params,
                    leaf_capacity=int(header["leaf_capacity"]),
                    support_margin=float(header["support_margin"]),
                    fuse_radius=float(header["fuse_radius"]),
                    method=header["method"],
                    latent_floor=float(header["latent_floor"]),
                    max_depth=int(header.get("max_depth", 24)),
                    max_normal_angle=float(header.get("max_normal_angle", MAX_NORMAL_ANGLE_DEG)),
                    grad_targets=header.get("grad_targets", "unit"))
            n = int(header["points"])
        except (KeyError, ValueError) as exc:
            raise InvalidInputError(f"{path}: bad header ({exc})") from None
        rows = text[i + 1:i + 1 + n]
        if len(rows) != n:
            raise InvalidInputError(f"{path}: expected {n} points, found {len(rows)}")
        pts = []
        for k, row in enumerate(rows):
            vals = row.split()
            if len(vals) != 2 * dim + 2:
                raise InvalidInputError(f"{path}: line {i + 2 + k}: expected {2 * dim + 2} fields")
            try:
                f = [float(v) for v in vals[:-1]]
                count = int(vals[-1])
            except ValueError:
                raise InvalidInputError(f"{path}: line {i + 2 + k}: bad number") from None
            pts.append(SurfacePoint(f[:dim], f[dim:2 * dim], f[2 * dim], count))
        m.insert_points_raw(pts)
        m.refit_dirty()
        return m


def _point_key(p: SurfacePoint):
    return (tuple(p.position), tuple(p.normal), p.pos_noise, p.obs_count)
