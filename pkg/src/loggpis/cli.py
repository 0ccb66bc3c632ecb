"""Command-line front end.

Verbs::

    loggpis simulate --config C --out DIR      # frames + manifest
    loggpis build    --config C --out DIR [--frames DIR]
    loggpis query    --map M [--points FILE] --out DIR
    loggpis mesh     --config C --map M --out DIR
    loggpis eval     --config C [--map M] [--truth PLY] --out DIR
    loggpis compare  --config C --out DIR      # RMSE over a lambda sweep

Exit status is 0 on success, 2 on invalid input and 3 when ``build`` had to
skip unreadable frames.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from .config import ConfigError, ScenarioConfig, load_config
from .covariance import KERNEL_NAMES, InvalidInputError
from .evaluation import EmptyReportError, dumps_json, evaluate_slice, mesh_error, polyline_hausdorff
from .map import METHODS, ClusterMap, EmptyMapError
from .ply import load_ply
from .recording import read_recording, write_recording
from .scenarios import make_scenario
from .surface import SIGN_MODES, extract_iso, node_signs, write_contour_csv

__all__ = ["main", "build_parser"]

logger = logging.getLogger("loggpis")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_PARTIAL = 3
DEFAULT_SWEEP = (5.0, 10.0, 20.0, 40.0)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="scenario configuration file")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--threads", type=int, help="cap on worker threads")
    common.add_argument("--lambda", dest="lam", type=float, help="override lambda (1/m)")
    common.add_argument("--kernel", choices=sorted(KERNEL_NAMES), help="covariance kernel")
    common.add_argument("--method", choices=METHODS, help="loggpis or the standard GPIS baseline")
    common.add_argument("-v", "--verbose", action="store_true", help="debug logging")

    p = argparse.ArgumentParser(prog="loggpis", description="Log-GPIS distance field mapping")
    sub = p.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="simulate sensor frames to disk")

    b = sub.add_parser("build", parents=[common], help="build and save a map")
    b.add_argument("--frames", type=Path, help="recording directory from 'simulate'")

    q = sub.add_parser("query", parents=[common], help="query a saved map")
    q.add_argument("--map", type=Path, required=True)
    q.add_argument("--points", type=Path, help="CSV/whitespace file of query points")

    m = sub.add_parser("mesh", parents=[common], help="extract the zero level set")
    m.add_argument("--map", type=Path, required=True)
    m.add_argument("--sign-mode", choices=SIGN_MODES, default="normal")

    e = sub.add_parser("eval", parents=[common], help="slice metrics against the oracle")
    e.add_argument("--map", type=Path, help="saved map (default: build from the config)")
    e.add_argument("--truth", type=Path, help="PLY point cloud used as ground truth")
    e.add_argument("--mesh", action="store_true", help="also extract and score the mesh")

    sub.add_parser("compare", parents=[common], help="Log-GPIS vs GPIS over a lambda sweep")
    return p


def _config(args) -> ScenarioConfig:
    overrides = {"seed": args.seed, "lambda": args.lam, "kernel": args.kernel,
                 "method": args.method, "threads": args.threads}
    return load_config(args.config, {k: None if v is None else str(v) for k, v in overrides.items()})


def _out_dir(args) -> Path:
    try:
        args.out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise InvalidInputError(f"cannot create output directory {args.out}: {exc.strerror}") from None
    return args.out


# ------------------------------------------------------------------ verbs


def cmd_simulate(args) -> int:
    cfg = _config(args)
    scn = make_scenario(cfg)
    out = _out_dir(args)
    path = write_recording(scn, out)
    print(f"{scn.name}: {len(scn.frames)} frames, {len(scn.all_points())} surface points -> {path}")
    return EXIT_OK


def _frame_points(args, cfg):
    """Per-frame point lists plus the scenario that fixes arena and grids."""
    if args.frames is None:
        scn = make_scenario(cfg)
        return scn, scn.frame_points, {}
    rec = read_recording(args.frames)
    if rec.manifest.get("scenario") != cfg.scenario:
        raise ConfigError(f"recording is for {rec.manifest.get('scenario')!r}, config says {cfg.scenario!r}")
    scn = make_scenario(replace(cfg, frames=0))
    scn.sensor_track = rec.sensor_track
    return scn, rec.frame_points, rec.errors


def cmd_build(args) -> int:
    cfg = _config(args)
    scn, frames, errors = _frame_points(args, cfg)
    out = _out_dir(args)
    m = scn.new_map()
    for k, pts in enumerate(frames):
        if pts is None:
            logger.error("frame %d skipped: %s", k, errors.get(k, "unreadable"))
            continue
        rep = m.insert_points(pts)
        n_fit = m.refit_dirty()
        logger.info("frame %d: %d points, %d inserted, %d fused, %d rejected, %d refits",
                    k, len(pts), rep.inserted, rep.fused, rep.rejected, n_fit)
    if m.n_points == 0:
        logger.warning("no surface points; writing an empty map")
    path = out / "map.txt"
    m.save(path)
    print(f"map: {m.n_points} points, {len(m.leaves())} leaves -> {path}")
    return EXIT_PARTIAL if errors else EXIT_OK


def read_points(path, dim: int) -> np.ndarray:
    """Query points from a comma or whitespace separated file.

    A non-numeric first line is taken as a header.  Raises
    :class:`InvalidInputError` on malformed rows.
    """
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise InvalidInputError(f"cannot read {path}: {exc.strerror}") from None
    rows = []
    for n, line in enumerate(lines, 1):
        text = line.split("#", 1)[0].replace(",", " ").split()
        if not text:
            continue
        try:
            vals = [float(t) for t in text]
        except ValueError:
            if n == 1:
                continue
            raise InvalidInputError(f"{path}:{n}: non-numeric value") from None
        if len(vals) != dim:
            raise InvalidInputError(f"{path}:{n}: expected {dim} coordinates, got {len(vals)}")
        if not np.all(np.isfinite(vals)):
            raise InvalidInputError(f"{path}:{n}: non-finite coordinate")
        rows.append(vals)
    return np.array(rows, dtype=float).reshape(-1, dim)


def write_query_csv(path, X, est) -> None:
    dim = X.shape[1]
    axes = ["x", "y", "z"][:dim]
    header = axes + ["distance"] + [f"g{a}" for a in axes] + ["variance", "sign", "clamped", "latent_mean"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for i in range(X.shape[0]):
            w.writerow([repr(float(v)) for v in X[i]] + [repr(float(est.distance[i]))]
                       + [repr(float(v)) for v in est.gradient[i]]
                       + [repr(float(est.variance[i])), int(est.sign[i]), int(est.clamped[i]),
                          repr(float(est.latent_mean[i]))])


def cmd_query(args) -> int:
    m = ClusterMap.load(args.map)
    if args.points is not None:
        X = read_points(args.points, m.dim)
    else:
        cfg = _config(args)
        X = make_scenario(replace(cfg, frames=0)).slice_grid.nodes()
        if X.shape[1] != m.dim:
            raise ConfigError("config slice dimension does not match the map")
    out = _out_dir(args)
    est = m.query_batch(X)
    if X.shape[0] and m.n_points:
        est = replace(est, sign=node_signs(m, X, est))
    path = out / "query.csv"
    write_query_csv(path, X, est)
    print(f"{X.shape[0]} queries -> {path}")
    return EXIT_OK


def _mesh(m, scn, sign_mode="normal"):
    if scn.mesh_grid.dim != m.dim:
        raise ConfigError("config mesh grid dimension does not match the map")
    return extract_iso(m, scn.mesh_grid, scn.sensor_track, sign_mode=sign_mode)


def _write_mesh(mesh, out: Path) -> Path:
    if mesh.dim == 2:
        path = out / "contour.csv"
        write_contour_csv(path, mesh)
    else:
        path = out / "mesh.ply"
        mesh.save_ply(path)
    return path


def cmd_mesh(args) -> int:
    cfg = _config(args)
    m = ClusterMap.load(args.map)
    scn = make_scenario(cfg)
    out = _out_dir(args)
    mesh = _mesh(m, scn, args.sign_mode)
    path = _write_mesh(mesh, out)
    print(f"{mesh.vertices.shape[0]} vertices, {mesh.faces.shape[0]} faces -> {path}")
    return EXIT_OK


def _truth(args, scn):
    if args.truth is None:
        return scn.scene
    data = load_ply(args.truth)
    if data.points.shape[0] == 0:
        raise EmptyReportError(f"{args.truth}: ground-truth cloud is empty")
    return data.points[:, :scn.dim]


def cmd_eval(args) -> int:
    cfg = _config(args)
    scn = make_scenario(cfg)
    truth = _truth(args, scn)
    out = _out_dir(args)
    t0 = time.perf_counter()
    if args.map is not None:
        m = ClusterMap.load(args.map)
        if args.method is not None and args.method != m.method:
            src = m
            m = src.empty_like(method=args.method)
            m.insert_points_raw(src.surface_points())
            m.refit_dirty()
    else:
        m, _ = scn.build_map()
    build_s = time.perf_counter() - t0
    report = evaluate_slice(m, truth, scn.slice_grid, csv_path=out / "slice.csv",
                            build_seconds=build_s)
    # Relative to metrics.json so reports do not depend on the output location.
    report.csv_path = "slice.csv"
    report.metadata.update(method=m.method, kernel=m.params.kernel_name, lam=m.params.lam,
                           scenario=scn.name, seed=cfg.seed)
    if args.mesh:
        mesh = _mesh(m, scn)
        _write_mesh(mesh, out)
        me = mesh_error(mesh, truth)
        me.write_histogram_csv(out / "mesh_error_hist.csv")
        summary = me.summary()
        if mesh.dim == 2:
            summary["hausdorff"] = polyline_hausdorff(mesh, truth)
        report.metadata["mesh"] = summary
    report.write_json(out / "metrics.json")
    print(f"rmse={report.rmse:.4f} mean_abs_err={report.mean_abs_err:.4f} "
          f"clamp_fraction={report.clamp_fraction:.3f} eikonal_p95={report.eikonal_p95:.3f}")
    return EXIT_OK


def _sweep_job(scn, cfg, kernel, lam, methods):
    rows = []
    params = replace(cfg, kernel=kernel).kernel_params(lam=lam)
    points = scn.all_points()
    t0 = time.perf_counter()
    log_map = scn.new_map(params, "loggpis")
    log_map.insert_points(points)
    log_map.refit_dirty()
    log_rep = evaluate_slice(log_map, scn.scene, scn.slice_grid,
                             build_seconds=time.perf_counter() - t0)
    X = scn.slice_grid.nodes()
    mask = ~log_map.query_batch(X).clamped
    if "loggpis" in methods:
        rows.append(("loggpis", kernel, lam, log_rep))
    if "gpis" in methods:
        t0 = time.perf_counter()
        g = scn.new_map(params, "gpis")
        g.insert_points(points)
        g.refit_dirty()
        rep = evaluate_slice(g, scn.scene, scn.slice_grid, mask=mask,
                             build_seconds=time.perf_counter() - t0)
        rows.append(("gpis", kernel, lam, rep))
    return rows


def cmd_compare(args) -> int:
    cfg = _config(args)
    scn = make_scenario(cfg)
    if not scn.all_points():
        raise EmptyMapError("scenario produced no surface points")
    out = _out_dir(args)
    if cfg.lambda_sweep:
        sweep = list(cfg.lambda_sweep)
    elif args.lam is not None:
        sweep = [args.lam]
    elif cfg.scenario == "circle":
        sweep = list(DEFAULT_SWEEP)
    else:
        sweep = [cfg.lambda_value]
    kernels = [args.kernel] if args.kernel else sorted(KERNEL_NAMES, key=KERNEL_NAMES.get, reverse=True)
    methods = [args.method] if args.method else list(METHODS)
    jobs = [(k, lam) for k in kernels for lam in sweep]
    with ThreadPoolExecutor(max_workers=max(1, cfg.threads)) as pool:
        results = list(pool.map(lambda j: _sweep_job(scn, cfg, j[0], j[1], methods), jobs))
    rows = [r for res in results for r in res]
    path = out / "compare.csv"
    fields = ["method", "kernel", "lambda", "rmse", "mean_abs_err", "eikonal_p95",
              "clamp_fraction", "n_nodes", "n_used"]
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(fields)
        for method, kernel, lam, rep in rows:
            w.writerow([method, kernel, repr(float(lam)), repr(rep.rmse), repr(rep.mean_abs_err),
                        repr(rep.eikonal_p95), repr(rep.clamp_fraction), rep.n_nodes, rep.n_used])
    summary = {"scenario": scn.name, "seed": cfg.seed,
               "rows": [dict(r.to_dict(), method=mt, kernel=k, lam=lam) for mt, k, lam, r in rows]}
    (out / "compare.json").write_text(dumps_json(summary))
    for method, kernel, lam, rep in rows:
        print(f"{method:8s} {kernel:9s} lambda={lam:g} rmse={rep.rmse:.4f} clamp={rep.clamp_fraction:.3f}")
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "build": cmd_build, "query": cmd_query,
            "mesh": cmd_mesh, "eval": cmd_eval, "compare": cmd_compare}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (InvalidInputError, EmptyMapError, EmptyReportError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
