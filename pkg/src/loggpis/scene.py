"""Analytic scenes: circles/spheres and axis-aligned boxes.

Primitives are assumed pairwise disjoint.  Under that assumption the
unsigned distance to the union boundary is the minimum of the per-primitive
unsigned distances, and the signed distance is the minimum signed distance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .covariance import InvalidInputError
from .field import INSIDE, OUTSIDE, FieldEstimates

__all__ = ["Ball", "Box", "AnalyticScene", "OracleField"]

_RAY_EPS = 1e-9


@dataclass(frozen=True)
class Ball:
    """Circle (2D) or sphere (3D)."""

    center: tuple
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if not self.radius > 0:
            raise InvalidInputError("radius must be > 0")

    @property
    def dim(self):
        return len(self.center)

    def signed_distance(self, X):
        return np.linalg.norm(X - np.asarray(self.center), axis=1) - self.radius

    def sdf_gradient(self, X):
        v = X - np.asarray(self.center)
        n = np.linalg.norm(v, axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(n > 0, v / n, np.nan)

    def ray_hits(self, origins, dirs):
        oc = origins - np.asarray(self.center)
        a = np.einsum("ij,ij->i", dirs, dirs)
        b = 2.0 * np.einsum("ij,ij->i", dirs, oc)
        c = np.einsum("ij,ij->i", oc, oc) - self.radius**2
        disc = b * b - 4 * a * c
        t = np.full(origins.shape[0], np.inf)
        ok = disc >= 0
        sq = np.sqrt(np.where(ok, disc, 0.0))
        t0 = (-b - sq) / (2 * a)
        t1 = (-b + sq) / (2 * a)
        near = np.where(t0 > _RAY_EPS, t0, np.where(t1 > _RAY_EPS, t1, np.inf))
        t[ok] = near[ok]
        return t

    def sample_surface(self, spacing):
        c = np.asarray(self.center)
        if self.dim == 2:
            n = max(8, int(np.ceil(2 * np.pi * self.radius / spacing)))
            th = 2 * np.pi * np.arange(n) / n
            normals = np.column_stack([np.cos(th), np.sin(th)])
        else:
            n = max(16, int(np.ceil(4 * np.pi * self.radius**2 / spacing**2)))
            k = np.arange(n) + 0.5
            phi = np.arccos(1 - 2 * k / n)
            th = np.pi * (1 + 5**0.5) * k
            normals = np.column_stack([np.cos(th) * np.sin(phi), np.sin(th) * np.sin(phi), np.cos(phi)])
        return c + self.radius * normals, normals


@dataclass(frozen=True)
class Box:
    """Axis-aligned box given by its center and full side lengths."""

    center: tuple
    size: tuple

    def __post_init__(self):
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        object.__setattr__(self, "size", tuple(float(s) for s in self.size))
        if len(self.center) != len(self.size):
            raise InvalidInputError("box center and size differ in dimension")
        if min(self.size) <= 0:
            raise InvalidInputError("box sizes must be > 0")

    @property
    def dim(self):
        return len(self.center)

    @property
    def half(self):
        return 0.5 * np.asarray(self.size)

    @property
    def lo(self):
        return np.asarray(self.center) - self.half

    @property
    def hi(self):
        return np.asarray(self.center) + self.half

    def signed_distance(self, X):
        q = np.abs(X - np.asarray(self.center)) - self.half
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=1)
        inside = np.minimum(q.max(axis=1), 0.0)
        return outside + inside

    def sdf_gradient(self, X):
        rel = X - np.asarray(self.center)
        s = np.where(rel >= 0, 1.0, -1.0)
        q = np.abs(rel) - self.half
        qp = np.maximum(q, 0.0)
        n = np.linalg.norm(qp, axis=1, keepdims=True)
        g = np.zeros_like(X)
        out = n[:, 0] > 0
        g[out] = s[out] * qp[out] / n[out]
        ins = ~out
        ax = np.argmax(q[ins], axis=1)
        g_in = np.zeros((ins.sum(), X.shape[1]))
        g_in[np.arange(ax.size), ax] = s[ins][np.arange(ax.size), ax]
        g[ins] = g_in
        return g

    def ray_hits(self, origins, dirs):
        lo, hi = self.lo, self.hi
        with np.errstate(divide="ignore", invalid="ignore"):
            inv = 1.0 / dirs
            t1 = (lo - origins) * inv
            t2 = (hi - origins) * inv
        zero = dirs == 0
        inslab = (origins >= lo) & (origins <= hi)
        t1 = np.where(zero, np.where(inslab, -np.inf, np.inf), t1)
        t2 = np.where(zero, np.inf, t2)
        tmin = np.minimum(t1, t2).max(axis=1)
        tmax = np.maximum(t1, t2).min(axis=1)
        hit = (tmax >= tmin) & (tmax > _RAY_EPS)
        t = np.where(tmin > _RAY_EPS, tmin, tmax)
        return np.where(hit, t, np.inf)

    def sample_surface(self, spacing):
        lo, hi = self.lo, self.hi
        pts, nrm = [], []
        d = self.dim
        for axis in range(d):
            others = [a for a in range(d) if a != axis]
            grids = [np.linspace(lo[a], hi[a], max(2, int(np.ceil((hi[a] - lo[a]) / spacing)) + 1))
                     for a in others]
            mesh = np.meshgrid(*grids, indexing="ij")
            flat = np.column_stack([m.ravel() for m in mesh])
            for side, val in ((-1.0, lo[axis]), (1.0, hi[axis])):
                p = np.empty((flat.shape[0], d))
                p[:, others] = flat
                p[:, axis] = val
                n = np.zeros_like(p)
                n[:, axis] = side
                pts.append(p)
                nrm.append(n)
        return np.vstack(pts), np.vstack(nrm)


class AnalyticScene:
    """A union of disjoint primitives with exact ray casting and distance."""

    def __init__(self, primitives):
        self.primitives = list(primitives)
        if not self.primitives:
            raise InvalidInputError("scene needs at least one primitive")
        dims = {p.dim for p in self.primitives}
        if len(dims) != 1 or dims.pop() not in (2, 3):
            raise InvalidInputError("primitives must share dimension 2 or 3")
        self.dim = self.primitives[0].dim

    def _X(self, X):
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        return X

    def signed_distance(self, X):
        X = self._X(X)
        return np.min([p.signed_distance(X) for p in self.primitives], axis=0)

    def edf(self, X):
        """Unsigned Euclidean distance to the scene boundary."""
        return np.abs(self.signed_distance(X))

    def inside(self, X):
        return self.signed_distance(X) < 0

    def distance_gradient(self, X):
        """Gradient of the unsigned distance (NaN where undefined)."""
        X = self._X(X)
        sd = np.array([p.signed_distance(X) for p in self.primitives])
        k = np.argmin(sd, axis=0)
        g = np.empty_like(X)
        for i, prim in enumerate(self.primitives):
            sel = k == i
            if sel.any():
                g[sel] = prim.sdf_gradient(X[sel])
        s = np.sign(sd[k, np.arange(X.shape[0])])
        return g * np.where(s < 0, -1.0, 1.0)[:, None]

    def ray_cast(self, origins, dirs):
        """Distance along each ray (in units of ``dirs``) to the first hit, inf on miss."""
        origins = self._X(origins)
        dirs = self._X(dirs)
        return np.min([p.ray_hits(origins, dirs) for p in self.primitives], axis=0)

    def sample_surface(self, spacing):
        """Points and outward normals covering the visible union boundary."""
        pts, nrm = [], []
        for i, prim in enumerate(self.primitives):
            p, n = prim.sample_surface(spacing)
            keep = np.ones(p.shape[0], dtype=bool)
            for j, other in enumerate(self.primitives):
                if j != i:
                    keep &= other.signed_distance(p) > 0
            pts.append(p[keep])
            nrm.append(n[keep])
        return np.vstack(pts), np.vstack(nrm)

    def bounds(self, pad=0.0):
        lo = np.full(self.dim, np.inf)
        hi = np.full(self.dim, -np.inf)
        for p in self.primitives:
            if isinstance(p, Ball):
                c = np.asarray(p.center)
                lo = np.minimum(lo, c - p.radius)
                hi = np.maximum(hi, c + p.radius)
            else:
                lo = np.minimum(lo, p.lo)
                hi = np.maximum(hi, p.hi)
        return lo - pad, hi + pad

    def field(self) -> "OracleField":
        return OracleField(self)


class OracleField:
    """Exact field with the same query interface as a map (sign always known)."""

    def __init__(self, scene: AnalyticScene):
        self.scene = scene
        self.dim = scene.dim

    def query_batch(self, X, sensor_pos=None) -> FieldEstimates:
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        sd = self.scene.signed_distance(X)
        d = np.abs(sd)
        sign = np.where(sd < 0, INSIDE, OUTSIDE).astype(int)
        g = self.scene.distance_gradient(X)
        return FieldEstimates(np.exp(-d), d, g, np.zeros_like(d), sign,
                              np.zeros(d.shape[0], dtype=bool))
