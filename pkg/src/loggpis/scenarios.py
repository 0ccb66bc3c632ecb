"""Reference scenarios built from configuration.

A :class:`Scenario` bundles an analytic scene with its simulated frames,
the surface points extracted from them and the evaluation grids.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .config import ConfigError, ScenarioConfig
from .map import ClusterMap, SurfacePoint
from .scene import AnalyticScene, Ball, Box
from .sensors import (DepthFrame, Intrinsics, Pose, Scan2D, depth_to_points,
                      scan_to_points, simulate_depth, simulate_scan)
from .surface import GridSpec

__all__ = [
    "Scenario",
    "make_scenario",
    "circle_scenario",
    "lidar2d_scenario",
    "boxes_scenario",
    "scene_from_primitives",
    "BOX_SIZE",
    "HorizontalSlice",
]

logger = logging.getLogger(__name__)

BOX_SIZE = (0.3, 0.2, 0.2)


@dataclass
class Scenario:
    """Everything needed to build and evaluate one map."""

    name: str
    scene: AnalyticScene
    arena_min: np.ndarray
    arena_max: np.ndarray
    frames: list
    frame_points: list
    sensor_track: np.ndarray
    slice_grid: GridSpec
    mesh_grid: GridSpec
    config: ScenarioConfig = field(default_factory=ScenarioConfig)
    fuse_radius: float = 0.015

    @property
    def dim(self) -> int:
        return self.scene.dim

    def all_points(self) -> list[SurfacePoint]:
        return [p for pts in self.frame_points for p in pts]

    def new_map(self, params=None, method=None, **overrides) -> ClusterMap:
        cfg = self.config
        kw = dict(leaf_capacity=cfg.leaf_capacity, support_margin=cfg.support_margin,
                  fuse_radius=self.fuse_radius, method=method or cfg.method,
                  latent_floor=cfg.latent_floor, grad_targets=cfg.grad_targets)
        kw.update(overrides)
        return ClusterMap(self.arena_min, self.arena_max, params or cfg.kernel_params(), **kw)

    def build_map(self, params=None, method=None, **overrides) -> tuple[ClusterMap, float]:
        """Insert every frame in order, refitting after each; returns (map, seconds)."""
        t0 = time.perf_counter()
        m = self.new_map(params, method, **overrides)
        for pts in self.frame_points:
            m.insert_points(pts)
            m.refit_dirty()
        return m, time.perf_counter() - t0


def scene_from_primitives(prims) -> AnalyticScene:
    """Scene from ``(kind, numbers)`` tuples as produced by the config parser."""
    out = []
    for kind, vals in prims:
        if kind in ("circle", "sphere"):
            if len(vals) not in (3, 4):
                raise ConfigError(f"{kind} needs centre coordinates and a radius")
            out.append(Ball(tuple(vals[:-1]), vals[-1]))
        else:
            if len(vals) not in (4, 6):
                raise ConfigError("box needs centre and size (2D: 4 numbers, 3D: 6)")
            h = len(vals) // 2
            out.append(Box(tuple(vals[:h]), tuple(vals[h:])))
    return AnalyticScene(out)


def _ring(n, radius, center=(0.0, 0.0)):
    th = 2 * np.pi * np.arange(n) / n
    return np.column_stack([center[0] + radius * np.cos(th), center[1] + radius * np.sin(th)])


# ---------------------------------------------------------------------------


def circle_scenario(cfg: ScenarioConfig | None = None, *, radius: float = 5.0,
                    half: float = 10.0) -> Scenario:
    """Exact samples of a circle in a square arena; no sensor simulation.

    The sensor track (used only by sensor-based sign recovery) is the arena
    corners and edge midpoints, all in free space.  ``frames = 0`` gives no
    points.
    """
    cfg = cfg or ScenarioConfig(scenario="circle")
    scene = (scene_from_primitives(cfg.primitives) if cfg.primitives
             else AnalyticScene([Ball((0.0, 0.0), radius)]))
    spacing = cfg.surface_spacing or 0.01
    P, N = scene.sample_surface(spacing)
    pts = [SurfacePoint(p, n, max(spacing, 1e-6)) for p, n in zip(P, N)]
    frame_points = [] if cfg.frames == 0 else [pts]
    lo, hi = np.full(2, -half), np.full(2, half)
    g = np.array([-half, 0.0, half])
    track = np.array([(x, y) for x in g for y in g if (x, y) != (0.0, 0.0)])
    cell = cfg.slice_cell or 0.1
    mesh_cell = cfg.mesh_cell or 0.02
    b_lo, b_hi = scene.bounds(pad=0.5)
    return Scenario("circle", scene, lo, hi, [], frame_points, track,
                    GridSpec.covering(lo, hi, cell), GridSpec.covering(b_lo, b_hi, mesh_cell),
                    cfg, fuse_radius=cfg.fuse_radius if cfg.fuse_radius is not None else 0.0)


_LIDAR_WORLD = [
    ("circle", [-2.0, 1.5, 0.8]),
    ("circle", [1.8, -1.5, 1.0]),
    ("circle", [0.3, 0.2, 0.5]),
    ("box", [2.0, 2.0, 1.2, 0.8]),
    ("box", [-1.5, -2.0, 1.0, 1.5]),
]


def lidar2d_scenario(cfg: ScenarioConfig | None = None) -> Scenario:
    """A 12 x 12 m world of circles and boxes seen by a ±135° lidar.

    By default 28 poses on a ring of radius 4.5 m face the centre; beams are
    1° apart with 0.01 m range noise.  ``pose = x y heading`` lines in the
    config replace the ring.
    """
    cfg = cfg or ScenarioConfig(scenario="lidar2d")
    scene = scene_from_primitives(cfg.primitives or _LIDAR_WORLD)
    if scene.dim != 2:
        raise ConfigError("lidar2d needs 2D primitives")
    n = cfg.frames if cfg.frames is not None else 28
    if cfg.poses:
        poses = [Pose.from_heading(v[2], v[:2]) for v in cfg.poses]
        if cfg.frames is not None:
            poses = poses[:n]
    else:
        pos = _ring(n, 4.5)
        poses = [Pose.from_heading(np.arctan2(-y, -x), (x, y)) for x, y in pos]
    noise = cfg.range_noise if cfg.range_noise is not None else 0.01
    template = Scan2D(Pose.identity(2), np.radians(-135.0), np.radians(135.0), np.radians(1.0),
                      range_noise=noise)
    frames, frame_pts = [], []
    for k, pose in enumerate(poses):
        scan = simulate_scan(scene, pose, template, seed=cfg.seed * 100003 + k)
        frames.append(scan)
        frame_pts.append(scan_to_points(scan))
    lo, hi = np.full(2, -6.0), np.full(2, 6.0)
    track = np.array([p.translation for p in poses]) if poses else np.zeros((0, 2))
    b_lo, b_hi = scene.bounds(pad=0.3)
    return Scenario("lidar2d", scene, lo, hi, frames, frame_pts, track,
                    GridSpec.covering(lo, hi, cfg.slice_cell or 0.1),
                    GridSpec.covering(b_lo, b_hi, cfg.mesh_cell or 0.02), cfg,
                    fuse_radius=cfg.fuse_radius if cfg.fuse_radius is not None else 1.5 * noise)


def _pile(gap: float = 0.005):
    sx, sy, sz = BOX_SIZE
    prims = []
    layers = [(3, 0.0), (2, 1.0), (1, 2.0)]
    for count, level in layers:
        z = sz / 2 + level * (sz + gap)
        xs = (np.arange(count) - (count - 1) / 2) * (sx + 2 * gap)
        for x in xs:
            prims.append(Box((float(x), 0.0, z), BOX_SIZE))
    prims.append(Box((0.0, 0.0, -gap - 0.025), (1.2, 0.8, 0.05)))
    return prims


def boxes_scenario(cfg: ScenarioConfig | None = None) -> Scenario:
    """Three-layer pile of 0.3 x 0.2 x 0.2 m boxes on a ground slab.

    A pinhole depth camera (64 x 48 px, 60° horizontal field of view) orbits
    the pile at 1.1 m radius and 0.8 m height looking at its centre.
    ``pose = ex ey ez tx ty tz`` config lines (eye, target) replace the orbit.
    """
    cfg = cfg or ScenarioConfig(scenario="boxes")
    scene = scene_from_primitives(cfg.primitives) if cfg.primitives else AnalyticScene(_pile())
    if scene.dim != 3:
        raise ConfigError("boxes needs 3D primitives")
    n = cfg.frames if cfg.frames is not None else 16
    target = np.array([0.0, 0.0, 0.25])
    if cfg.poses:
        poses = [Pose.look_at(v[:3], v[3:6]) for v in cfg.poses]
        if cfg.frames is not None:
            poses = poses[:n]
    else:
        ring = _ring(n, 1.1)
        poses = [Pose.look_at((x, y, 0.8), target) for x, y in ring]
    noise = cfg.depth_noise if cfg.depth_noise is not None else 0.002
    template = DepthFrame(Pose.identity(3), Intrinsics.from_fov(64, 48, 60.0), depth_noise=noise)
    stride = cfg.stride or 1
    frames, frame_pts = [], []
    for k, pose in enumerate(poses):
        fr = simulate_depth(scene, pose, template, seed=cfg.seed * 100003 + k)
        frames.append(fr)
        frame_pts.append(depth_to_points(fr, stride))
    lo, hi = np.array([-0.8, -0.6, -0.2]), np.array([0.8, 0.6, 0.9])
    track = np.array([p.translation for p in poses]) if poses else np.zeros((0, 3))
    h = cfg.slice_height if cfg.slice_height is not None else 0.3
    cell = cfg.slice_cell or 0.02
    slice_grid = _slice(h, cell)
    b_lo = np.array([-0.55, -0.2, 0.05])
    b_hi = np.array([0.55, 0.2, 0.7])
    mesh_grid = GridSpec.covering(b_lo, b_hi, cfg.mesh_cell or 0.02)
    return Scenario("boxes", scene, lo, hi, frames, frame_pts, track, slice_grid, mesh_grid, cfg,
                    fuse_radius=cfg.fuse_radius if cfg.fuse_radius is not None else 0.015)


def _slice(height: float, cell: float):
    """Horizontal 1.2 x 1.2 m slice at ``height`` as a flat list of 3D queries."""
    n = int(round(1.2 / cell)) + 1
    return HorizontalSlice((-0.6, -0.6), cell, (n, n), height)


@dataclass(frozen=True)
class HorizontalSlice:
    """2D grid embedded at constant ``z``; ``nodes()`` returns 3D points."""

    origin: tuple
    cell_size: float
    counts: tuple
    height: float

    @property
    def grid2d(self) -> GridSpec:
        return GridSpec(self.origin, self.cell_size, self.counts)

    def nodes(self) -> np.ndarray:
        xy = self.grid2d.nodes()
        return np.column_stack([xy, np.full(xy.shape[0], self.height)])


def make_scenario(cfg: ScenarioConfig) -> Scenario:
    builders = {"circle": circle_scenario, "lidar2d": lidar2d_scenario, "boxes": boxes_scenario}
    return builders[cfg.scenario](cfg)
