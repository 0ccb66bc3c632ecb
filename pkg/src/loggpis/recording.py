"""On-disk recordings of simulated sensor frames.

A recording directory holds ``manifest.json`` (sensor model and one entry
per frame), ``trajectory.csv`` (one pose row per frame) and one CSV file
per frame under ``frames/``:

* 2D scans: ``angle,range`` rows, ``nan`` for beams without a return.
* Depth frames: one image row per line, ``0`` for invalid pixels.
* Dense surface samples (circle scenario): a single ``surface.ply`` with
  normals instead of frames.

Poses are stored as ``tx ty heading`` (2D) or ``tx ty tz qw qx qy qz`` (3D).
Everything is written with ``repr`` floats so a fixed seed gives
byte-identical files.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .covariance import InvalidInputError
from .map import SurfacePoint
from .ply import load_ply, save_ply
from .sensors import DepthFrame, Intrinsics, Pose, Scan2D, depth_to_points, scan_to_points

__all__ = ["Recording", "write_recording", "read_recording", "pose_to_row", "pose_from_row"]

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"


def pose_to_row(pose: Pose) -> list[float]:
    t = [float(v) for v in pose.translation]
    if pose.dim == 2:
        return t + [float(pose.heading)]
    return t + [float(v) for v in pose.quaternion()]


def pose_from_row(row) -> Pose:
    row = [float(v) for v in row]
    if len(row) == 3:
        return Pose.from_heading(row[2], row[:2])
    if len(row) == 7:
        return Pose.from_quaternion(row[3:], row[:3])
    raise InvalidInputError(f"pose row needs 3 (2D) or 7 (3D) numbers, got {len(row)}")


def _fmt(v: float) -> str:
    return repr(float(v))


def _write_scan(path: Path, scan: Scan2D) -> None:
    lines = ["angle,range"]
    for a, r in zip(scan.angles, scan.ranges):
        lines.append(f"{_fmt(a)},{'nan' if np.isnan(r) else _fmt(r)}")
    path.write_text("\n".join(lines) + "\n")


def _write_depth(path: Path, frame: DepthFrame) -> None:
    d = np.where(np.isfinite(frame.depth), frame.depth, 0.0)
    path.write_text("\n".join(",".join(_fmt(v) for v in row) for row in d) + "\n")


def _sensor_entry(scenario) -> dict:
    if not scenario.frames:
        if scenario.name == "circle":
            pts = scenario.all_points()
            noise = pts[0].pos_noise if pts else 0.0
            return {"type": "points", "file": "surface.ply", "pos_noise": noise}
        return {"type": "none"}
    f = scenario.frames[0]
    if isinstance(f, Scan2D):
        return {"type": "lidar2d", "angle_min": f.angle_min, "angle_max": f.angle_max,
                "angle_step": f.angle_step, "range_noise": f.range_noise}
    k = f.intrinsics
    return {"type": "depth", "fx": k.fx, "fy": k.fy, "cx": k.cx, "cy": k.cy,
            "width": k.width, "height": k.height, "depth_noise": f.depth_noise,
            "stride": scenario.config.stride or 1}


def write_recording(scenario, out_dir) -> Path:
    """Write the frames of ``scenario`` to ``out_dir``; returns the manifest path."""
    out = Path(out_dir)
    (out / "frames").mkdir(parents=True, exist_ok=True)
    sensor = _sensor_entry(scenario)
    entries, traj = [], []
    dim = scenario.dim
    names = ["tx", "ty", "heading"] if dim == 2 else ["tx", "ty", "tz", "qw", "qx", "qy", "qz"]
    traj.append(",".join(["frame", "file"] + names))
    if sensor["type"] == "points":
        pts = scenario.all_points()
        P = np.array([p.position for p in pts]).reshape(-1, dim)
        N = np.array([p.normal for p in pts]).reshape(-1, dim)
        pad = np.zeros((P.shape[0], 3 - dim))
        save_ply(out / sensor["file"], np.hstack([P, pad]), np.hstack([N, pad]))
    for k, frame in enumerate(scenario.frames):
        rel = f"frames/frame_{k:03d}.csv"
        if isinstance(frame, Scan2D):
            _write_scan(out / rel, frame)
        else:
            _write_depth(out / rel, frame)
        row = pose_to_row(frame.pose)
        entries.append({"file": rel, "pose": row})
        traj.append(",".join([str(k), rel] + [_fmt(v) for v in row]))
    manifest = {"scenario": scenario.name, "seed": scenario.config.seed, "dim": dim,
                "sensor": sensor, "frames": entries}
    (out / "trajectory.csv").write_text("\n".join(traj) + "\n")
    path = out / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


@dataclass
class Recording:
    """A recording read back from disk.

    ``frame_points[k]`` is ``None`` when frame ``k`` failed to load; the
    reason is in ``errors[k]``.
    """

    manifest: dict
    poses: list = field(default_factory=list)
    frame_points: list = field(default_factory=list)
    errors: dict = field(default_factory=dict)

    @property
    def sensor_track(self) -> np.ndarray:
        dim = self.manifest.get("dim", 2)
        if not self.poses:
            return np.zeros((0, dim))
        return np.array([p.translation for p in self.poses])


def _read_scan(path: Path, pose: Pose, sensor: dict) -> Scan2D:
    rows = path.read_text().splitlines()
    if not rows or rows[0].strip() != "angle,range":
        raise InvalidInputError(f"{path}: missing 'angle,range' header")
    ranges = []
    for n, row in enumerate(rows[1:], 2):
        parts = row.split(",")
        if len(parts) != 2:
            raise InvalidInputError(f"{path}:{n}: expected 2 columns")
        try:
            ranges.append(float(parts[1]))
        except ValueError:
            raise InvalidInputError(f"{path}:{n}: bad range {parts[1]!r}") from None
    return Scan2D(pose, sensor["angle_min"], sensor["angle_max"], sensor["angle_step"],
                  np.array(ranges), sensor["range_noise"])


def _read_depth(path: Path, pose: Pose, sensor: dict) -> DepthFrame:
    intr = Intrinsics(sensor["fx"], sensor["fy"], sensor["cx"], sensor["cy"],
                      int(sensor["width"]), int(sensor["height"]))
    try:
        depth = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise InvalidInputError(f"{path}: {exc}") from None
    return DepthFrame(pose, intr, depth, sensor["depth_noise"])


def read_recording(in_dir) -> Recording:
    """Load a recording and convert every frame to surface points.

    Per-frame failures (unreadable or malformed files) are collected in
    ``errors`` instead of raised; a bad manifest raises.
    """
    root = Path(in_dir)
    try:
        manifest = json.loads((root / MANIFEST).read_text())
        sensor = manifest["sensor"]
        kind = sensor["type"]
        entries = manifest["frames"]
    except OSError as exc:
        raise InvalidInputError(f"cannot read {root / MANIFEST}: {exc.strerror}") from None
    except (ValueError, KeyError, TypeError) as exc:
        raise InvalidInputError(f"{root / MANIFEST}: malformed manifest ({exc})") from None
    rec = Recording(manifest)
    if kind == "points":
        data = load_ply(root / sensor["file"])
        dim = manifest["dim"]
        if not data.has_normals:
            raise InvalidInputError(f"{sensor['file']}: surface samples need normals")
        noise = max(float(sensor["pos_noise"]), 1e-6)
        rec.frame_points.append([SurfacePoint(p[:dim], n[:dim], noise)
                                 for p, n in zip(data.points, data.normals)])
        return rec
    for k, entry in enumerate(entries):
        try:
            pose = pose_from_row(entry["pose"])
            rec.poses.append(pose)
            path = root / entry["file"]
            if kind == "lidar2d":
                pts = scan_to_points(_read_scan(path, pose, sensor))
            elif kind == "depth":
                pts = depth_to_points(_read_depth(path, pose, sensor), int(sensor.get("stride", 1)))
            else:
                raise InvalidInputError(f"unknown sensor type {kind!r}")
        except OSError as exc:
            rec.errors[k] = f"{entry.get('file')}: {exc.strerror}"
            rec.frame_points.append(None)
        except (InvalidInputError, KeyError, TypeError) as exc:
            rec.errors[k] = str(exc)
            rec.frame_points.append(None)
        else:
            rec.frame_points.append(pts)
    return rec
