"""Simulated planar lidar and pinhole depth sensors.

Scans and depth images are simulated by exact ray casting against an
:class:`~loggpis.scene.AnalyticScene` and converted into oriented
:class:`~loggpis.map.SurfacePoint` lists.  Cameras follow the OpenCV
convention (x right, y down, z forward).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.transform import Rotation

from .covariance import InvalidInputError
from .map import SurfacePoint

__all__ = [
    "Pose",
    "Scan2D",
    "Intrinsics",
    "DepthFrame",
    "simulate_scan",
    "scan_to_points",
    "simulate_depth",
    "depth_to_points",
    "back_project",
    "project",
]

logger = logging.getLogger(__name__)

_ORTHO_TOL = 1e-9
# Lower bound on per-point position noise; a noiseless sensor still yields
# strictly positive noise so downstream fusion weights stay finite.
MIN_POS_NOISE = 1e-6


@dataclass(frozen=True)
class Pose:
    """Rigid transform from the sensor frame to the world frame.

    ``world = rotation @ local + translation``.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(-1)
        if R.ndim != 2 or R.shape[0] != R.shape[1] or R.shape[0] != t.size:
            raise InvalidInputError("rotation must be DxD with D = len(translation)")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise InvalidInputError("pose must be finite")
        if np.abs(R.T @ R - np.eye(t.size)).max() > _ORTHO_TOL:
            raise InvalidInputError("rotation is not orthonormal")
        if np.linalg.det(R) < 0:
            raise InvalidInputError("rotation must have det = +1")
        R.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @property
    def dim(self) -> int:
        return self.translation.size

    @classmethod
    def identity(cls, dim: int) -> "Pose":
        return cls(np.eye(dim), np.zeros(dim))

    @classmethod
    def from_heading(cls, heading: float, translation) -> "Pose":
        """2D pose from a heading angle (rad) measured from the x axis."""
        c, s = np.cos(heading), np.sin(heading)
        return cls(np.array([[c, -s], [s, c]]), translation)

    @classmethod
    def from_quaternion(cls, wxyz, translation) -> "Pose":
        w, x, y, z = (float(v) for v in wxyz)
        R = Rotation.from_quat([x, y, z, w]).as_matrix()
        return cls(R, translation)

    @classmethod
    def look_at(cls, eye, target, up=(0.0, 0.0, 1.0)) -> "Pose":
        """Camera pose at ``eye`` whose optical (z) axis points at ``target``."""
        eye = np.asarray(eye, dtype=float)
        f = np.asarray(target, dtype=float) - eye
        f /= np.linalg.norm(f)
        r = np.cross(f, np.asarray(up, dtype=float))
        if np.linalg.norm(r) < 1e-9:
            raise InvalidInputError("viewing direction is parallel to up")
        r /= np.linalg.norm(r)
        down = np.cross(f, r)
        return cls(np.column_stack([r, down, f]), eye)

    @property
    def heading(self) -> float:
        if self.dim != 2:
            raise InvalidInputError("heading is defined for 2D poses only")
        return float(np.arctan2(self.rotation[1, 0], self.rotation[0, 0]))

    def quaternion(self) -> np.ndarray:
        """Rotation as ``(w, x, y, z)`` with ``w >= 0``."""
        if self.dim != 3:
            raise InvalidInputError("quaternion is defined for 3D poses only")
        x, y, z, w = Rotation.from_matrix(self.rotation).as_quat()
        q = np.array([w, x, y, z])
        return -q if w < 0 else q

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float).reshape(-1, self.dim)
        return X @ self.rotation.T + self.translation

    def rotate(self, V) -> np.ndarray:
        return np.asarray(V, dtype=float).reshape(-1, self.dim) @ self.rotation.T

    def inverse(self) -> "Pose":
        Rt = self.rotation.T
        return Pose(Rt, -Rt @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: apply ``other`` first."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)


# ---------------------------------------------------------------------------
# 2D lidar


@dataclass(frozen=True)
class Scan2D:
    """A planar range scan; ``ranges`` holds NaN for beams without a return."""

    pose: Pose
    angle_min: float
    angle_max: float
    angle_step: float
    ranges: np.ndarray = field(default=None)
    range_noise: float = 0.0

    def __post_init__(self):
        if self.pose.dim != 2:
            raise InvalidInputError("scan pose must be 2D")
        if not self.angle_step > 0 or not self.angle_max >= self.angle_min:
            raise InvalidInputError("need angle_step > 0 and angle_max >= angle_min")
        if self.range_noise < 0:
            raise InvalidInputError("range_noise must be >= 0")
        n = self.n_beams
        if self.ranges is None:
            r = np.full(n, np.nan)
        else:
            r = np.asarray(self.ranges, dtype=float).reshape(-1).copy()
            if r.size != n:
                raise InvalidInputError(f"expected {n} ranges, got {r.size}")
            if np.any(r[~np.isnan(r)] <= 0):
                raise InvalidInputError("ranges must be > 0 or NaN")
        r.setflags(write=False)
        object.__setattr__(self, "ranges", r)

    @property
    def n_beams(self) -> int:
        return int(round((self.angle_max - self.angle_min) / self.angle_step)) + 1

    @property
    def angles(self) -> np.ndarray:
        return self.angle_min + self.angle_step * np.arange(self.n_beams)

    def beam_directions(self) -> np.ndarray:
        """Unit beam directions in the world frame."""
        a = self.angles
        return self.pose.rotate(np.column_stack([np.cos(a), np.sin(a)]))

    def hit_points(self) -> np.ndarray:
        """World-frame hit positions (NaN rows for missing returns)."""
        return self.pose.translation + self.ranges[:, None] * self.beam_directions()


def simulate_scan(scene, pose: Pose, template: Scan2D, seed: int) -> Scan2D:
    """Ray-cast every beam of ``template`` from ``pose`` and add range noise."""
    rng = np.random.default_rng(seed)
    probe = replace(template, pose=pose, ranges=None)
    dirs = probe.beam_directions()
    origins = np.broadcast_to(pose.translation, dirs.shape)
    t = scene.ray_cast(origins, dirs)
    noise = rng.normal(0.0, 1.0, t.size) * template.range_noise
    r = np.where(np.isfinite(t), t + noise, np.nan)
    # Noise can in principle push a grazing return through the origin.
    r[r <= 0] = np.nan
    return replace(probe, ranges=r)


def _perp(v):
    return np.column_stack([-v[:, 1], v[:, 0]])


def scan_to_points(scan: Scan2D, *, neighbor_window: int = 3,
                   max_gap: float = 0.5) -> list[SurfacePoint]:
    """Oriented surface points from a scan.

    The tangent at each hit is the chord between its nearest valid
    neighbours on either side (at most ``neighbor_window`` beams away and no
    farther than ``max_gap`` metres); a one-sided chord is used at the ends
    of a run.  Hits with no usable neighbour are dropped.
    """
    valid = np.isfinite(scan.ranges)
    if valid.sum() < 2:
        logger.warning("scan has %d valid returns; no points produced", int(valid.sum()))
        return []
    P = scan.hit_points()
    sensor = scan.pose.translation
    n = P.shape[0]
    idx = np.flatnonzero(valid)
    noise = max(scan.range_noise, MIN_POS_NOISE)

    def neighbour(k, step):
        for j in range(k + step, k + step * (neighbor_window + 1), step):
            if 0 <= j < n and valid[j]:
                if np.linalg.norm(P[j] - P[k]) <= max_gap:
                    return j
                return None
        return None

    out = []
    for k in idx:
        a = neighbour(k, -1)
        b = neighbour(k, +1)
        if a is None and b is None:
            continue
        lo = P[a] if a is not None else P[k]
        hi = P[b] if b is not None else P[k]
        tangent = hi - lo
        norm = np.linalg.norm(tangent)
        if norm == 0:
            continue
        nrm = _perp((tangent / norm)[None])[0]
        if nrm @ (sensor - P[k]) < 0:
            nrm = -nrm
        if nrm @ (sensor - P[k]) <= 0:
            continue
        out.append(SurfacePoint(P[k], nrm, noise))
    return out


# ---------------------------------------------------------------------------
# depth camera


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels plus the image size."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidInputError("fx and fy must be > 0")
        if self.width < 1 or self.height < 1:
            raise InvalidInputError("image size must be positive")

    @classmethod
    def from_fov(cls, width: int, height: int, hfov_deg: float) -> "Intrinsics":
        fx = 0.5 * width / np.tan(np.radians(hfov_deg) / 2)
        return cls(fx, fx, (width - 1) / 2, (height - 1) / 2, width, height)

    def rays(self) -> np.ndarray:
        """Camera-frame ray per pixel, scaled so the z component is 1 (H x W x 3)."""
        v, u = np.mgrid[0:self.height, 0:self.width].astype(float)
        return np.stack([(u - self.cx) / self.fx, (v - self.cy) / self.fy,
                         np.ones_like(u)], axis=-1)


@dataclass(frozen=True)
class DepthFrame:
    """A depth image; invalid pixels hold NaN (zeros are converted on construction)."""

    pose: Pose
    intrinsics: Intrinsics
    depth: np.ndarray = None
    depth_noise: float = 0.0

    def __post_init__(self):
        if self.pose.dim != 3:
            raise InvalidInputError("depth frame pose must be 3D")
        if self.depth_noise < 0:
            raise InvalidInputError("depth_noise must be >= 0")
        shape = (self.intrinsics.height, self.intrinsics.width)
        if self.depth is None:
            d = np.full(shape, np.nan)
        else:
            d = np.array(self.depth, dtype=float)
            if d.shape != shape:
                raise InvalidInputError(f"depth shape {d.shape} != {shape}")
            if np.any(d[np.isfinite(d)] < 0):
                raise InvalidInputError("depths must be >= 0")
            d[~np.isfinite(d) | (d == 0)] = np.nan
        d.setflags(write=False)
        object.__setattr__(self, "depth", d)


def back_project(intr: Intrinsics, pose: Pose, u, v, depth) -> np.ndarray:
    """World points for pixel coordinates ``(u, v)`` at z-depth ``depth``."""
    u, v, depth = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (u, v, depth)))
    cam = np.stack([(u - intr.cx) / intr.fx * depth, (v - intr.cy) / intr.fy * depth, depth],
                   axis=-1)
    return pose.transform(cam.reshape(-1, 3)).reshape(cam.shape)


def project(intr: Intrinsics, pose: Pose, X) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Pixel coordinates ``(u, v)`` and z-depth of world points."""
    X = np.asarray(X, dtype=float)
    cam = pose.inverse().transform(X.reshape(-1, 3))
    z = cam[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = intr.fx * cam[:, 0] / z + intr.cx
        v = intr.fy * cam[:, 1] / z + intr.cy
    shape = X.shape[:-1]
    return u.reshape(shape), v.reshape(shape), z.reshape(shape)


def simulate_depth(scene, pose: Pose, template: DepthFrame, seed: int) -> DepthFrame:
    """Ray-cast each pixel of ``template`` from ``pose`` and add depth noise."""
    rng = np.random.default_rng(seed)
    intr = template.intrinsics
    rays = intr.rays().reshape(-1, 3)
    dirs = pose.rotate(rays)
    origins = np.broadcast_to(pose.translation, dirs.shape)
    # With z-normalized rays the hit parameter is the z-depth itself.
    t = scene.ray_cast(origins, dirs)
    noise = rng.normal(0.0, 1.0, t.size) * template.depth_noise
    d = np.where(np.isfinite(t), t + noise, np.nan)
    d[~(d > 0)] = np.nan
    return DepthFrame(pose, intr, d.reshape(intr.height, intr.width), template.depth_noise)


def depth_to_points(frame: DepthFrame, stride: int = 1, *, window: int = 5,
                    min_neighbors: int = 8, residual_factor: float = 2.0) -> list[SurfacePoint]:
    """Oriented surface points from a depth frame.

    Every ``stride``-th pixel is back-projected.  Its normal comes from a
    least-squares plane through the valid pixels of the surrounding
    ``window x window`` patch.  Pixels with fewer than ``min_neighbors``
    valid neighbours, or whose plane fit has an RMS residual above
    ``residual_factor * depth_noise * depth`` (e.g. across a box edge), are
    dropped.
    """
    if stride < 1:
        raise InvalidInputError("stride must be >= 1")
    if window < 3 or window % 2 == 0:
        raise InvalidInputError("window must be an odd integer >= 3")
    intr = frame.intrinsics
    D = frame.depth
    valid = np.isfinite(D)
    if not valid.any():
        logger.warning("depth frame has no valid pixels")
        return []
    v, u = np.mgrid[0:intr.height, 0:intr.width]
    W = back_project(intr, frame.pose, u, v, np.where(valid, D, 0.0))
    center = frame.pose.translation
    h = window // 2

    out = []
    for r in range(0, intr.height, stride):
        for c in range(0, intr.width, stride):
            if not valid[r, c]:
                continue
            r0, r1 = max(0, r - h), min(intr.height, r + h + 1)
            c0, c1 = max(0, c - h), min(intr.width, c + h + 1)
            mask = valid[r0:r1, c0:c1]
            if mask.sum() - 1 < min_neighbors:
                continue
            pts = W[r0:r1, c0:c1][mask]
            mu = pts.mean(axis=0)
            _, s, vt = np.linalg.svd(pts - mu, full_matrices=False)
            nrm = vt[-1]
            rms = s[-1] / np.sqrt(pts.shape[0])
            sigma = max(frame.depth_noise * D[r, c], MIN_POS_NOISE)
            if rms > residual_factor * sigma + MIN_POS_NOISE:
                continue
            p = W[r, c]
            if nrm @ (center - p) < 0:
                nrm = -nrm
            if nrm @ (center - p) <= 0:
                continue
            out.append(SurfacePoint(p, nrm, sigma))
    return out
