"""Command line entry point: ``wforge construct | verify | degree | report``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import analysis
from .config import RunConfig, load_config, parse_expr
from .errors import ConfigError, DegreeUndefinedError, FormatError, WForgeError
from .field import SymField, evaluate_many, read_grid
from .field.norms import holder_seminorm_grid
from .scheme import run_full, write_run_log


def _log(args, msg):
    if not args.quiet:
        print(msg)


def _load(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    return cfg


def _out_dir(args, cfg) -> Path:
    return Path(args.out or cfg.out)


def _floats(text, n, flag):
    try:
        vals = [float(t) for t in text.split(",")]
    except ValueError:
        raise ConfigError(f"{flag}: expected {n} comma-separated numbers, got '{text}'") from None
    if len(vals) != n:
        raise ConfigError(f"{flag}: expected {n} comma-separated numbers, got '{text}'")
    return vals


# -- construct ----------------------------------------------------------------


def cmd_construct(args) -> int:
    cfg = _load(args)
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.stages is not None:
        over["max_stages"] = args.stages
    scheme = cfg.scheme_config(**over)
    res = args.resolution or cfg.export_resolution
    out = _out_dir(args, cfg)
    v0, w0, A0, f = cfg.fields()
    try:
        art = run_full(v0, w0, A0, f, scheme)
    except WForgeError as err:
        trace = getattr(err, "trace", None) or []
        record = {"phase": getattr(err, "phase", None), "stage": getattr(err, "stage", None),
                  "error": type(err).__name__, "message": str(err)}
        write_run_log(out, [*trace, record])
        raise
    paths = art.export(out, res, scheme.domain)
    _log(args, f"defect trace: {' '.join(f'{d:.4g}' for d in art.defect_trace)}")
    _log(args, f"artifacts written to {out} ({len(paths)} files)")
    return 0


# -- verify -----------------------------------------------------------------


def _source_values(cfg: RunConfig, X, Y):
    v0, w0, A0, f = cfg.fields()
    if f is None:
        f = analysis.curl_curl_source(A0)
    (fv,) = evaluate_many([f], X.ravel(), Y.ravel())
    return fv.reshape(X.shape), A0


def _grid_xy(g):
    xs, ys = g.axes()
    return np.meshgrid(xs, ys)


def _snapshot_paths(art: Path):
    manifest = art / "manifest.json"
    if manifest.exists():
        try:
            names = [s["name"] for s in json.loads(manifest.read_text())["snapshots"]]
        except (ValueError, KeyError) as err:
            raise FormatError(f"{manifest}: corrupt manifest ({err})") from None
        return [(k, art / f"{n}.wfg") for k, n in enumerate(names)]
    if (art / "v.wfg").exists() or not art.exists():
        return [(0, art / "v.wfg")]
    return []


def _grid_defect(v, w1, w2, A0: SymField, X, Y, step):
    hx = (X[0, 1] - X[0, 0]) * step
    hy = (Y[1, 0] - Y[0, 0]) * step
    sl = (slice(None, None, step), slice(None, None, step))
    vy, vx = np.gradient(v[sl], hy, hx, edge_order=2)
    w1y, w1x = np.gradient(w1[sl], hy, hx, edge_order=2)
    w2y, w2x = np.gradient(w2[sl], hy, hx, edge_order=2)
    a11, a12, a22 = (a.reshape(X[sl].shape) for a in evaluate_many(A0.entries, X[sl].ravel(), Y[sl].ravel()))
    d11 = a11 - 0.5 * vx * vx - w1x
    d12 = a12 - 0.5 * vx * vy - 0.5 * (w1y + w2x)
    d22 = a22 - 0.5 * vy * vy - w2y
    tr, disc = 0.5 * (d11 + d22), np.hypot(0.5 * (d11 - d22), d12)
    return float(np.max(np.abs(tr) + disc)), vx, hx, hy


def cmd_verify(args) -> int:
    cfg = _load(args)
    art = _out_dir(args, cfg)
    snaps = _snapshot_paths(art)
    if not snaps:
        raise FormatError(f"{art}: no grids to verify")
    scheme = cfg.scheme_config()
    battery = analysis.standard_battery(scheme.domain)
    rows = []
    A0 = None
    for k, path in snaps:
        g = read_grid(path)
        X, Y = _grid_xy(g)
        fv, A0 = _source_values(cfg, X, Y)
        for step in (1, 2):
            ny, nx = g.values[::step, ::step].shape
            res = nx - 1
            vals = [analysis.lattice_hessian_residual(g.values, g.x_range, g.y_range, fv, phi, step)
                    for phi in battery]
            for j, r in enumerate(vals):
                rows.append(("weak_hessian", k, f"bump{j}", res, r))
            rows.append(("weak_hessian", k, "max", res, max(vals)))
    w_paths = [art / "w1.wfg", art / "w2.wfg"]
    if all(p.exists() for p in w_paths) and A0 is not None:
        g = read_grid(snaps[-1][1] if not (art / "v.wfg").exists() else art / "v.wfg")
        w1, w2 = (read_grid(p).values for p in w_paths)
        if w1.shape != g.values.shape or w2.shape != g.values.shape:
            raise FormatError("w grids do not match the v grid (nx, ny)")
        X, Y = _grid_xy(g)
        for step in (1, 2):
            d, vx, hx, hy = _grid_defect(g.values, w1, w2, A0, X, Y, step)
            res = vx.shape[1] - 1
            rows.append(("defect", len(snaps) - 1, "sup", res, d))
            rows.append(("holder_grad_v", len(snaps) - 1, f"alpha={scheme.alpha:g}", res,
                         holder_seminorm_grid(vx, hx, hy, scheme.alpha)))
    art.mkdir(parents=True, exist_ok=True)
    path = art / "verify.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "stage", "test_id", "resolution", "value"])
        for kind, k, tid, res, val in rows:
            w.writerow([kind, k, tid, res, repr(float(val))])
    for kind, k, tid, res, val in rows:
        if tid in ("max", "sup") or kind == "holder_grad_v":
            _log(args, f"{kind:14s} stage {k:2d} res {res:5d} {tid:10s} {val:.6g}")
    _log(args, f"wrote {path}")
    return 0


# -- degree -----------------------------------------------------------------


def _polygon(args):
    if args.polygon:
        pts = []
        for item in args.polygon.split(";"):
            if item.strip():
                pts.append(tuple(_floats(item, 2, "--polygon")))
        return tuple(pts)
    cx, cy, r = _floats(args.disk, 3, "--disk")
    return analysis.disk_polygon((cx, cy), r, 64)


def cmd_degree(args) -> int:
    cfg = _load(args)
    v0, _, A0, f = cfg.fields()
    v = parse_expr(args.v) if args.v else v0
    query = analysis.DegreeQuery(_polygon(args), tuple(_floats(args.y, 2, "--y")))
    delta = args.delta or 0.0
    out = {"delta": delta}
    try:
        ans = analysis.perturbed_degree(v, delta, query)
    except DegreeUndefinedError as err:
        out.update(degree=None, error="degree-undefined", clearance=err.clearance,
                   tolerance=err.tolerance, message=str(err))
        _emit_degree(args, cfg, out)
        raise
    out.update(ans.record(query))
    if args.g:
        cx, cy, r = _floats(args.g, 3, "--g")
        src = f if f is not None else analysis.det_hessian(v)
        out["formula_residual"] = analysis.degree_formula_residual(
            v, src, query, analysis.TestFunction((cx, cy), r), args.quad_resolution)
    _emit_degree(args, cfg, out)
    return 0


def _emit_degree(args, cfg, out):
    text = json.dumps(out, sort_keys=True)
    if args.out:
        d = Path(args.out)
        d.mkdir(parents=True, exist_ok=True)
        (d / "degree.json").write_text(text + "\n")
    if not args.quiet:
        print(text)


# -- report -----------------------------------------------------------------


def cmd_report(args) -> int:
    cfg = _load(args)
    art = _out_dir(args, cfg)
    log = art / "run.jsonl"
    if not log.exists():
        raise FormatError(f"{log}: run log not found")
    records = []
    for n, line in enumerate(log.read_text().splitlines(), start=1):
        try:
            records.append(json.loads(line))
        except ValueError:
            raise FormatError(f"{log}:{n}: not a JSON line") from None
    stages = [r for r in records if "kind" in r]
    summary = {
        "stages": len(stages),
        "phases": [r.get("phase") for r in stages],
        "defects": [r.get("defect_after") for r in stages],
        "max_lambda": max((max(r["lambdas"]) for r in stages if r.get("lambdas")), default=None),
        "residuals": [r["max_residual"] for r in records if "max_residual" in r],
        "error": next((r for r in records if "error" in r), None),
    }
    (art / "report.json").write_text(json.dumps(summary, sort_keys=True, indent=1) + "\n")
    if not args.quiet:
        for r in stages:
            print(f"{r['phase']:7s} stage {r['stage']:2d}  defect {r['defect_before']:.4g} -> "
                  f"{r['defect_after']:.4g}  max lambda {max(r['lambdas']):.4g}")
        if summary["error"]:
            print(f"stopped: {summary['error']['message']}")
    return 0


# -- entry point ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file")
    common.add_argument("--out", help="artifact directory")
    common.add_argument("--seed", type=int, help="run seed recorded in the log")
    common.add_argument("--stages", type=int, help="Hoelder stage cap")
    common.add_argument("--resolution", type=float, help="export grid resolution per unit length")
    common.add_argument("--quiet", action="store_true", help="suppress progress output")

    p = argparse.ArgumentParser(prog="wforge", description="Convex integration for 2D Monge-Ampere.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("construct", parents=[common], help="run the full construction and export grids")
    sub.add_parser("verify", parents=[common], help="weak Hessian residuals of exported grids")
    d = sub.add_parser("degree", parents=[common], help="Brouwer degree of grad v on a polygon")
    shape = d.add_mutually_exclusive_group(required=True)
    shape.add_argument("--polygon", help="counterclockwise vertices 'x,y;x,y;...'")
    shape.add_argument("--disk", help="disk polygon 'cx,cy,r'")
    d.add_argument("--y", required=True, help="target point 'y1,y2'")
    d.add_argument("--delta", type=float, help="rotation perturbation of grad v")
    d.add_argument("--v", help="override v (expression); defaults to v0 of the config")
    d.add_argument("--g", help="bump 'cx,cy,r' for the degree formula residual")
    d.add_argument("--quad-resolution", type=float, default=128.0)
    sub.add_parser("report", parents=[common], help="summarize a run log")
    return p


COMMANDS = {"construct": cmd_construct, "verify": cmd_verify, "degree": cmd_degree,
            "report": cmd_report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except WForgeError as err:
        print(f"wforge {args.command}: {type(err).__name__}: {err}", file=sys.stderr)
        return err.exit_code
    except OSError as err:
        print(f"wforge {args.command}: I/O error: {err}", file=sys.stderr)
        return FormatError.exit_code


if __name__ == "__main__":
    sys.exit(main())
