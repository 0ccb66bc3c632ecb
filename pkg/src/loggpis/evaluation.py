"""Accuracy metrics against exact ground truth, plus the standard-GPIS baseline."""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats
from scipy.spatial import cKDTree

from .covariance import InvalidInputError, KernelParams
from .map import ClusterMap
from .scene import AnalyticScene
from .surface import GridSpec, Mesh

__all__ = [
    "EmptyReportError",
    "MetricsReport",
    "MeshErrorReport",
    "oracle_edf",
    "standard_gpis_baseline",
    "evaluate_slice",
    "mesh_error",
    "polyline_hausdorff",
    "eikonal_residuals",
    "surface_points_from",
    "dumps_json",
]


class EmptyReportError(ValueError):
    """No usable nodes or vertices to compute metrics on."""


def _nan_to_none(obj):
    if isinstance(obj, dict):
        return {k: _nan_to_none(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_nan_to_none(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return None
    return obj


def dumps_json(obj) -> str:
    """Strict JSON (NaN and infinities become ``null``), sorted keys."""
    return json.dumps(_nan_to_none(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


def oracle_edf(truth, queries) -> np.ndarray:
    """Exact unsigned distance from each query to ``truth``.

    ``truth`` is an :class:`AnalyticScene` (closed form) or an ``N x D``
    point cloud (nearest-neighbour search).
    """
    Q = np.asarray(queries, dtype=float)
    if isinstance(truth, AnalyticScene):
        return truth.edf(Q.reshape(-1, truth.dim))
    P = np.asarray(truth, dtype=float)
    if P.ndim != 2 or P.shape[0] == 0:
        raise InvalidInputError("point cloud truth must be a non-empty N x D array")
    d, _ = cKDTree(P).query(Q.reshape(-1, P.shape[1]))
    return d


def standard_gpis_baseline(points, params: KernelParams, queries, *, arena_min=None,
                           arena_max=None, **map_kwargs) -> np.ndarray:
    """Signed distance predicted by a plain GPIS (``y = 0``, gradients ``n``).

    The same cluster machinery as the Log-GPIS map is used; the arena
    defaults to the bounding box of points and queries padded by 1 m.
    """
    pts = list(points)
    Q = np.asarray(queries, dtype=float)
    if not pts:
        raise InvalidInputError("baseline needs at least one surface point")
    dim = pts[0].dim
    Q = Q.reshape(-1, dim)
    if arena_min is None or arena_max is None:
        allp = np.vstack([np.array([p.position for p in pts]), Q])
        arena_min = allp.min(axis=0) - 1.0
        arena_max = allp.max(axis=0) + 1.0
    m = ClusterMap(arena_min, arena_max, params, method="gpis", **map_kwargs)
    m.insert_points(pts)
    return m.query_batch(Q).latent_mean


@dataclass
class MetricsReport:
    """Slice accuracy of one field against the oracle EDF.

    ``rmse`` and ``mean_abs_err`` exclude clamped nodes (and nodes outside
    ``mask`` when one is given); ``clamp_fraction`` is over all nodes.
    Runtime statistics are reported under ``metadata`` by :meth:`to_dict`
    so the remaining fields are reproducible.
    """

    rmse: float
    mean_abs_err: float
    eikonal_p95: float
    clamp_fraction: float
    n_nodes: int
    n_used: int
    csv_path: str | None = None
    build_seconds: float | None = None
    query_us_per_point: float = 0.0
    metadata: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["metadata"] = dict(d["metadata"], build_seconds=d.pop("build_seconds"),
                             query_us_per_point=d.pop("query_us_per_point"))
        return d

    def write_json(self, path) -> None:
        Path(path).write_text(dumps_json(self.to_dict()))


def eikonal_residuals(distance: np.ndarray, cell_size: float, valid: np.ndarray) -> np.ndarray:
    """``| |grad d| - 1 |`` by central differences at nodes whose stencil is valid."""
    grads = np.gradient(distance, cell_size)
    if distance.ndim == 1:
        grads = [grads]
    mag = np.sqrt(sum(g * g for g in grads))
    ok = valid.copy()
    for ax in range(distance.ndim):
        sl_lo = [slice(None)] * distance.ndim
        sl_hi = [slice(None)] * distance.ndim
        sl_lo[ax] = slice(0, 1)
        sl_hi[ax] = slice(-1, None)
        ok[tuple(sl_lo)] = False
        ok[tuple(sl_hi)] = False
        ok &= np.roll(valid, 1, axis=ax) & np.roll(valid, -1, axis=ax)
    return np.abs(mag[ok] - 1.0)


def evaluate_slice(source, truth, grid, *, csv_path=None, mask=None,
                   build_seconds=None) -> MetricsReport:
    """Compare ``|distance|`` from ``source`` with the oracle EDF on a grid.

    Parameters
    ----------
    source
        A map, an oracle field, or anything with ``query_batch(X)``.
    truth
        Analytic scene or dense point cloud.
    grid : GridSpec, HorizontalSlice or array_like
        Slice grid or explicit ``M x D`` queries.  The Eikonal metric is only
        computed for a full :class:`GridSpec`.
    mask : array_like of bool, optional
        Restrict the error statistics to these nodes (e.g. the non-clamped
        region of another method).
    """
    if hasattr(grid, "nodes"):
        X = grid.nodes()
    else:
        X = np.asarray(grid, dtype=float)
        X = X.reshape(-1, X.shape[-1]) if X.size else np.zeros((0, 1))
    if X.shape[0] == 0:
        raise EmptyReportError("no query nodes")
    t0 = time.perf_counter()
    est = source.query_batch(X)
    q_us = 1e6 * (time.perf_counter() - t0) / X.shape[0]
    d_true = oracle_edf(truth, X)
    err = est.distance - d_true
    used = ~est.clamped
    if mask is not None:
        used &= np.asarray(mask, dtype=bool).reshape(-1)
    if not used.any():
        raise EmptyReportError("every node is clamped or masked out")
    e = err[used]
    eik = np.nan
    if isinstance(grid, GridSpec):
        res = eikonal_residuals(est.distance.reshape(grid.counts), grid.cell_size,
                                (~est.clamped).reshape(grid.counts))
        if res.size:
            eik = float(np.percentile(res, 95))
    if csv_path is not None:
        _write_nodes_csv(csv_path, X, d_true, est, used)
    return MetricsReport(
        rmse=float(np.sqrt(np.mean(e * e))),
        mean_abs_err=float(np.mean(np.abs(e))),
        eikonal_p95=eik,
        clamp_fraction=float(np.mean(est.clamped)),
        n_nodes=int(X.shape[0]),
        n_used=int(used.sum()),
        csv_path=None if csv_path is None else str(csv_path),
        build_seconds=build_seconds,
        query_us_per_point=q_us,
    )


def _write_nodes_csv(path, X, d_true, est, used):
    dim = X.shape[1]
    names = ["x", "y", "z"][:dim]
    header = ",".join(names + ["truth", "distance", "error", "variance", "sign", "clamped", "used"])
    rows = [header]
    for i in range(X.shape[0]):
        vals = [repr(float(v)) for v in X[i]]
        vals += [repr(float(d_true[i])), repr(float(est.distance[i])),
                 repr(float(est.distance[i] - d_true[i])), repr(float(est.variance[i])),
                 str(int(est.sign[i])), str(int(est.clamped[i])), str(int(used[i]))]
        rows.append(",".join(vals))
    Path(path).write_text("\n".join(rows) + "\n")


@dataclass
class MeshErrorReport:
    """Per-vertex distance to the true surface and summary statistics."""

    errors: np.ndarray
    bin_edges: np.ndarray
    counts: np.ndarray
    median: float
    p95: float
    spearman: float

    def write_histogram_csv(self, path) -> None:
        lines = ["bin_lo,bin_hi,count"]
        for lo, hi, c in zip(self.bin_edges[:-1], self.bin_edges[1:], self.counts):
            lines.append(f"{float(lo)!r},{float(hi)!r},{int(c)}")
        Path(path).write_text("\n".join(lines) + "\n")

    def summary(self) -> dict:
        return {"vertices": int(self.errors.size), "median": self.median, "p95": self.p95,
                "spearman_variance_error": self.spearman}


def mesh_error(mesh: Mesh, truth, *, bin_width: float = 1e-3) -> MeshErrorReport:
    """Vertex errors against ``truth`` with a ``bin_width`` histogram.

    ``spearman`` is the rank correlation between vertex variance and error
    (NaN when either is constant).
    """
    if mesh.vertices.shape[0] == 0:
        raise EmptyReportError("mesh has no vertices")
    err = oracle_edf(truth, mesh.vertices)
    top = max(bin_width, np.ceil(err.max() / bin_width) * bin_width)
    edges = np.arange(0.0, top + 0.5 * bin_width, bin_width)
    if edges.size < 2:
        edges = np.array([0.0, bin_width])
    counts, edges = np.histogram(err, bins=edges)
    rho = np.nan
    var = np.asarray(mesh.vertex_variance, dtype=float)
    if var.size == err.size and np.ptp(var) > 0 and np.ptp(err) > 0:
        rho = float(stats.spearmanr(var, err).statistic)
    return MeshErrorReport(err, edges, counts, float(np.median(err)),
                           float(np.percentile(err, 95)), rho)


def _point_segment_distance(P, A, B, chunk=2048):
    AB = B - A
    L2 = np.einsum("ij,ij->i", AB, AB)
    out = np.empty(P.shape[0])
    for s in range(0, P.shape[0], chunk):
        p = P[s:s + chunk, None, :]
        t = np.einsum("ijk,jk->ij", p - A[None], AB) / np.where(L2 > 0, L2, 1.0)
        t = np.clip(t, 0.0, 1.0)
        proj = A[None] + t[..., None] * AB[None]
        out[s:s + chunk] = np.sqrt(((p - proj) ** 2).sum(-1)).min(axis=1)
    return out


def polyline_hausdorff(mesh: Mesh, truth, *, spacing: float = 1e-3) -> float:
    """Symmetric Hausdorff distance between a 2D contour and the true boundary.

    Contour-to-truth uses the exact EDF at vertices and segment midpoints;
    truth-to-contour samples the true boundary every ``spacing`` metres.
    """
    if mesh.dim != 2 or mesh.is_empty:
        raise EmptyReportError("need a non-empty 2D contour")
    A = mesh.vertices[mesh.faces[:, 0]]
    B = mesh.vertices[mesh.faces[:, 1]]
    probes = np.vstack([mesh.vertices, 0.5 * (A + B)])
    forward = float(oracle_edf(truth, probes).max())
    if isinstance(truth, AnalyticScene):
        T, _ = truth.sample_surface(spacing)
    else:
        T = np.asarray(truth, dtype=float)
    backward = float(_point_segment_distance(T, A, B).max())
    return max(forward, backward)


def surface_points_from(points) -> np.ndarray:
    """Positions of a list of :class:`SurfacePoint` as an array."""
    return np.array([p.position for p in points])

