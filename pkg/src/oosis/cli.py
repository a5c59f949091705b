"""Command-line driver: synth, label, eval and boundary subcommands.

Exit codes: 0 success, 2 usage or input error, 3 internal assertion.
Outputs go to ``--out``, else to $OOSIS_OUT_DIR, else the working directory.
"""
from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .boundary import (DEFAULT_TAU, ComposedBoundary, angle_table, compose,
                       extract_pairs, gt_field, load_annotation, loss_identity_check, nms_thin)
from .core import load_field, save_field
from .energy import DEFAULT_LAMBDA, DEFAULT_MU, EnergyParams, EnergyProblem
from .instances import (OcclusionGraph, adhoc_confidence, depth_map, extract_instances, graph_from_labeling,
                        load_instances, save_instances, write_pgm)
from .metrics import (Scene, average_precision, cycle_stats, oair_curve, random_decycle,
                      weighted_coverage, write_curve_csv)
from .moves import IterationCapError, expansion_cycle_increasing, optimize_jump
from .synth import SceneSpec, generate, load_spec

OUT_ENV = "OOSIS_OUT_DIR"
DEFAULT_LMAX = 8


class UsageError(Exception):
    pass


def _out_dir(arg) -> Path:
    d = Path(arg or os.environ.get(OUT_ENV) or ".")
    d.mkdir(parents=True, exist_ok=True)
    return d


def _dump_json(path, doc):
    with open(path, "w") as f:
        json.dump(doc, f, indent=1, sort_keys=True)
        f.write("\n")


# ---------------------------------------------------------------------------
# synth

def cmd_synth(args) -> int:
    base = load_spec(args.spec) if args.spec else SceneSpec()
    over = {k: v for k, v in {
        "height": args.height, "width": args.width, "n_instances": args.instances,
        "n_classes": args.classes, "eta": args.eta, "seed": args.seed,
        "shapes": tuple(args.shapes) if args.shapes else None,
    }.items() if v is not None}
    spec = replace(base, **over)
    a, sem, bnd = generate(spec)
    out = _out_dir(args.out)
    with open(out / "annotation.json", "w") as f:
        json.dump(a.to_json(), f)
    save_field(sem, out / "semantic.ogf")
    save_field(bnd, out / "boundary.ogf")
    print(f"wrote {out / 'annotation.json'}, {out / 'semantic.ogf'}, {out / 'boundary.ogf'}")
    return 0


# ---------------------------------------------------------------------------
# label

def label_scene(semantic, boundary, algo="jump", params: EnergyParams | None = None,
                tau=DEFAULT_TAU, thin=False, lmax=DEFAULT_LMAX):
    """Full pipeline for one image; returns a dict of labeling, instances, graph, trace."""
    composed = boundary if isinstance(boundary, ComposedBoundary) else compose(boundary)
    if composed.grid != semantic.grid:
        raise UsageError(f"grid mismatch: semantic {semantic.grid.shape} vs boundary {composed.grid.shape}")
    if thin:
        composed = nms_thin(composed, tau)
    pairs = extract_pairs(composed, tau)
    problem = EnergyProblem(semantic, pairs, params)
    if algo == "jump":
        x, trace = optimize_jump(problem)
    elif algo == "expansion1":
        x, trace = expansion_cycle_increasing(problem, lmax)
    else:
        raise UsageError(f"unknown algorithm {algo!r}")
    inst = adhoc_confidence(extract_instances(x, semantic), composed)
    graph = graph_from_labeling(inst, x)
    return {"problem": problem, "labeling": x, "instances": inst, "graph": graph, "trace": trace}


def write_label_outputs(res, out: Path):
    save_field(res["labeling"], out / "labels.olbl")
    save_instances(out / "instances.json", res["instances"], res["graph"])
    _dump_json(out / "graph.json", res["graph"].to_json())
    res["trace"].dump(out / "trace.json")
    write_pgm(out / "depth.pgm", depth_map(res["instances"], res["labeling"]))


def _load_boundary(path):
    try:
        return load_field(path, "boundary")
    except ValueError:
        return load_field(path, "composed")


def _label_one(job):
    sem_path, bnd_path, out, algo, params, tau, thin, lmax = job
    sem = load_field(sem_path, "semantic")
    bnd = _load_boundary(bnd_path)
    res = label_scene(sem, bnd, algo, params, tau, thin, lmax)
    out.mkdir(parents=True, exist_ok=True)
    write_label_outputs(res, out)
    t = res["trace"]
    final = t.records[-1].energy_after if len(t) else float("nan")
    return str(out), len(res["instances"]), final


def cmd_label(args) -> int:
    params = EnergyParams(lam=args.lam, mu=args.mu)
    jobs = []
    if args.scene:
        if args.semantic or args.boundary:
            raise UsageError("use either --scene or --semantic/--boundary")
        base = args.out or os.environ.get(OUT_ENV)
        root = Path(base) if base else None
        for d in args.scene:
            d = Path(d)
            out = root / d.name if root is not None else d
            jobs.append((d / "semantic.ogf", d / "boundary.ogf", out, args.algo, params, args.tau, args.thin, args.lmax))
    else:
        if not (args.semantic and args.boundary):
            raise UsageError("need --semantic and --boundary (or --scene)")
        jobs.append((args.semantic, args.boundary, _out_dir(args.out), args.algo, params, args.tau, args.thin,
                     args.lmax))
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as ex:
            results = list(ex.map(_label_one, jobs))
    else:
        results = [_label_one(j) for j in jobs]
    for out, n, e in results:
        print(f"{out}: {n} instances, final energy {e!r}")
    return 0


# ---------------------------------------------------------------------------
# eval

def _point_json(p):
    return {"threshold": p.threshold, "recall": p.recall, "accuracy": p.accuracy,
            "total": p.total, "recovered": p.recovered, "correct": p.correct}


def cmd_eval(args) -> int:
    if len(args.pred) != len(args.gt):
        raise UsageError("--pred and --gt must be given the same number of times")
    scenes = []
    for pp, gp in zip(args.pred, args.gt):
        pred, pg = load_instances(pp)
        gt, gg = load_instances(gp)
        if pred.grid != gt.grid:
            raise UsageError(f"grid mismatch between {pp} and {gp}")
        pg = pg or OcclusionGraph(tuple(pred.ids()))
        gg = gg or OcclusionGraph(tuple(gt.ids()))
        if args.decycle is not None:
            pg = random_decycle(pg, args.decycle)
        scenes.append(Scene(pred, pg, gt, gg))
    out = _out_dir(args.out)
    iou_pts = oair_curve(scenes, "iou")
    conf_pts = oair_curve(scenes, "confidence", args.iou)
    write_curve_csv(out / "oair_iou.csv", iou_pts)
    write_curve_csv(out / "oair_confidence.csv", conf_pts)
    n_nodes = sum(len(s.pred_graph.nodes) for s in scenes)
    cyc = sum(cycle_stats(s.pred_graph) * len(s.pred_graph.nodes) for s in scenes) / n_nodes if n_nodes else 0.0
    report = {
        "scenes": len(scenes),
        "weighted_coverage": float(np.mean([weighted_coverage(s.gt, s.pred) for s in scenes])),
        "weighted_coverage_gt": float(np.nanmean([weighted_coverage(s.gt, s.pred, "gt") for s in scenes]))
        if any(len(s.gt) for s in scenes) else None,
        "ap": _nan_none(average_precision(scenes)),
        "cycle_fraction": cyc,
        "oair_iou": [_point_json(p) for p in iou_pts],
        "oair_confidence": [_point_json(p) for p in conf_pts],
    }
    _dump_json(out / "metrics.json", report)
    p = iou_pts[0]
    acc = "absent" if p.accuracy is None else f"{p.accuracy:.4f}"
    print(f"WC {report['weighted_coverage']:.4f}  OAIR@{p.threshold} recall {p.recall:.4f} accuracy {acc}  "
          f"cycles {cyc:.4f}")
    return 0


def _nan_none(x):
    return None if x is None or (isinstance(x, float) and math.isnan(x)) else x


# ---------------------------------------------------------------------------
# boundary

def cmd_boundary(args) -> int:
    action = args.action
    if action == "gt":
        if not args.annotation:
            raise UsageError("gt needs --annotation")
        f = gt_field(load_annotation(args.annotation))
        path = Path(args.output) if args.output else _out_dir(args.out) / "gt_boundary.ogf"
        save_field(f, path)
        print(f"wrote {path}")
    elif action == "check-identity":
        if args.random:
            rng = np.random.default_rng(args.seed)
            h, w = args.size, args.size
            B = (rng.random((h, w)) < 0.5).astype(np.float64)
            E = rng.dirichlet(np.ones(4), size=(h, w))
            b = rng.uniform(0.01, 0.99, size=(h, w))
            e = rng.dirichlet(np.ones(4), size=(h, w))
        else:
            if not (args.boundary and args.annotation):
                raise UsageError("check-identity needs --boundary and --annotation, or --random")
            pred = load_field(args.boundary, "boundary")
            gt = gt_field(load_annotation(args.annotation))
            B, E = gt.b, gt.e
            b, e = pred.b, pred.e
        lhs, rhs = loss_identity_check(B, b, E, e)
        diff = abs(lhs - rhs)
        rel = diff / max(1.0, abs(lhs))
        print(f"lhs={lhs!r} rhs={rhs!r} absdiff={diff:.3e} reldiff={rel:.3e}")
    elif action == "angles":
        c = _composed_input(args)
        rows = angle_table(c, args.tau)
        dest = open(args.output, "w", newline="") if args.output else sys.stdout
        try:
            w = csv.writer(dest)
            w.writerow(["row", "col", "mass", "normal", "boundary"])
            for r in rows:
                w.writerow([r[0], r[1], repr(r[2]), repr(r[3]), repr(r[4])])
        finally:
            if dest is not sys.stdout:
                dest.close()
    elif action == "thin":
        c = nms_thin(_composed_input(args), args.tau)
        path = Path(args.output) if args.output else _out_dir(args.out) / "thinned.ogf"
        save_field(c, path)
        print(f"wrote {path}")
    return 0


def _composed_input(args) -> ComposedBoundary:
    if args.composed:
        return load_field(args.composed, "composed")
    if args.boundary:
        return compose(load_field(args.boundary, "boundary"))
    raise UsageError("need --composed or --boundary")


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oosis", description="Occlusion-ordered instance segmentation by jump moves.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="generate a synthetic layered scene")
    s.add_argument("--spec", help="JSON scene spec; flags override its fields")
    s.add_argument("--seed", type=int)
    s.add_argument("--instances", type=int)
    s.add_argument("--classes", type=int)
    s.add_argument("--height", type=int)
    s.add_argument("--width", type=int)
    s.add_argument("--eta", type=float)
    s.add_argument("--shapes", nargs="+", choices=["rect", "ellipse"])
    s.add_argument("--out")
    s.set_defaults(func=cmd_synth)

    lab = sub.add_parser("label", help="label a scene and extract ordered instances")
    lab.add_argument("--semantic")
    lab.add_argument("--boundary", help="oriented boundary [b, e0..e3] or composed field")
    lab.add_argument("--scene", action="append", help="directory with semantic.ogf and boundary.ogf (repeatable)")
    lab.add_argument("--algo", choices=["jump", "expansion1"], default="jump")
    lab.add_argument("--lam", type=float, default=DEFAULT_LAMBDA)
    lab.add_argument("--mu", type=float, default=DEFAULT_MU)
    lab.add_argument("--tau", type=float, default=DEFAULT_TAU)
    lab.add_argument("--thin", action="store_true", help="apply non-maximum suppression before pair extraction")
    lab.add_argument("--lmax", type=int, default=DEFAULT_LMAX, help="largest label for expansion1")
    lab.add_argument("--jobs", type=int, default=1)
    lab.add_argument("--out")
    lab.set_defaults(func=cmd_label)

    ev = sub.add_parser("eval", help="OAIR curves, WC, AP and cycle statistics")
    ev.add_argument("--pred", action="append", required=True)
    ev.add_argument("--gt", action="append", required=True)
    ev.add_argument("--decycle", type=int, metavar="SEED")
    ev.add_argument("--iou", type=float, default=0.5, help="IoU threshold for the confidence sweep")
    ev.add_argument("--out")
    ev.set_defaults(func=cmd_eval)

    b = sub.add_parser("boundary", help="boundary utilities")
    b.add_argument("action", choices=["gt", "check-identity", "angles", "thin"])
    b.add_argument("--annotation")
    b.add_argument("--boundary")
    b.add_argument("--composed")
    b.add_argument("--random", action="store_true")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--size", type=int, default=16)
    b.add_argument("--tau", type=float, default=DEFAULT_TAU)
    b.add_argument("--output", help="output file")
    b.add_argument("--out", help="output directory")
    b.set_defaults(func=cmd_boundary)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (AssertionError, IterationCapError) as exc:
        print(f"oosis: internal error: {exc}", file=sys.stderr)
        return 3
    except (UsageError, ValueError, KeyError, OSError) as exc:
        print(f"oosis: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
