"""``clrlane`` command line: eval, liou, nms, assign, synth, bench.

Exit status 2 signals bad arguments, 1 bad data. With ``--json`` results go
to stdout as JSON and errors to stderr as JSON.
"""

import argparse
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .assignment import assign
from .config import load_config
from .errors import LaneError
from .geometry import LaneGrid, Lane
from .head import inference_filter, lane_nms
from .io_formats import (
    culane_label_path, culane_lanes_on_grid, load_category_lists, load_list,
    read_culane_file, read_tusimple_file, TusimpleRecord,
)
from .liou import liou
from .metrics import EvalConfig, evaluate_dataset, tusimple_eval
from .render import render_image
from .synth import (
    grid_to_json, prior_from_json, synth_eval_images, synth_scene, write_scene, xs_from_json,
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _common():
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", help="YAML or JSON config file")
    p.add_argument("--json", action="store_true", help="machine-readable output")
    p.add_argument("--jobs", type=int, default=1, help="worker processes")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-points", type=int, dest="n_points")
    p.add_argument("--image-height", type=float, dest="image_height")
    p.add_argument("--image-width", type=float, dest="image_width")
    return p


def build_parser():
    common = _common()
    parser = _Parser(prog="clrlane", description=__doc__.splitlines()[0].replace("``", ""))
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("eval", parents=[common], help="evaluate predictions")
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--list", dest="list_file")
    p.add_argument("--format", choices=("culane", "tusimple"), default="culane")
    p.add_argument("--iou-mode", choices=("mask", "line"), dest="iou_mode")
    p.add_argument("--line-width", type=float, dest="line_width")
    p.add_argument("--inclusive", action="store_const", const=True, dest="inclusive",
                   help="count IoU equal to a threshold as a match")
    p.add_argument("--category-list", action="append", default=[], metavar="NAME=FILE")
    p.add_argument("--render-dir", help="write one SVG per image here")

    p = sub.add_parser("liou", parents=[common], help="Line IoU with gradient")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--radius", type=float, dest="radius_e")
    p.add_argument("--union-rows", action="store_const", const=True, dest="union_rows")

    p = sub.add_parser("nms", parents=[common], help="score filter + lane NMS")
    p.add_argument("--pred", required=True)
    p.add_argument("--score-thresh", type=float, dest="score_thresh")
    p.add_argument("--iou-thresh", type=float, dest="nms_iou_thresh")
    p.add_argument("--radius", type=float, dest="radius_e")

    p = sub.add_parser("assign", parents=[common], help="dynamic top-k assignment table")
    p.add_argument("--priors", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--k-max", type=int, dest="k_max")
    p.add_argument("--one-to-one", action="store_const", const=True, dest="one_to_one")

    p = sub.add_parser("synth", parents=[common], help="write a seeded synthetic scene")
    p.add_argument("--out", required=True)
    p.add_argument("--n-priors", type=int, default=12)
    p.add_argument("--n-gts", type=int, default=3)
    p.add_argument("--channels", type=int, dest="channels")

    p = sub.add_parser("bench", parents=[common], help="wall-time micro-benchmarks")
    p.add_argument("--images", type=int, default=2000)
    p.add_argument("--liou-evals", type=int, default=10000)
    return parser


_OVERRIDE_KEYS = (
    "n_points", "image_height", "image_width", "iou_mode", "line_width", "inclusive",
    "radius_e", "union_rows", "score_thresh", "nms_iou_thresh", "k_max", "one_to_one",
    "channels",
)


def _config(args):
    overrides = {k: getattr(args, k, None) for k in _OVERRIDE_KEYS}
    return load_config(args.config, overrides)


def _read_json(path):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise LaneError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None


def _grid_from(doc, cfg):
    if isinstance(doc, dict) and "grid" in doc:
        g = doc["grid"]
        return LaneGrid(g["n_points"], g["image_height"], g["image_width"])
    return cfg.grid()


def _emit(args, payload, human):
    if args.json:
        print(json.dumps(payload, indent=2))
    else:
        print(human)


# ---------------------------------------------------------------------------
# commands


def cmd_liou(args):
    cfg = _config(args)
    pred = xs_from_json(_read_json(args.pred))
    gt = xs_from_json(_read_json(args.gt))
    res = liou(pred, gt, e=cfg.radius_e, union_rows=cfg.union_rows)
    payload = {
        "value": res.value, "loss": res.loss, "radius": cfg.radius_e,
        "rows": [int(r) for r in res.rows],
        "grad_pred": [float(g) for g in res.grad_pred],
        "grad_loss": [float(g) for g in res.grad_loss],
    }
    human = (
        f"LIoU  {res.value:.10g}\nloss  {res.loss:.10g}\n"
        f"grad  {' '.join(f'{g:.6g}' for g in res.grad_pred[res.rows])}"
    )
    _emit(args, payload, human)


def _items(doc, key):
    if isinstance(doc, dict):
        if key not in doc:
            raise LaneError(f"input document has no {key!r} entry")
        return doc[key]
    return doc


def cmd_nms(args):
    cfg = _config(args)
    doc = _read_json(args.pred)
    items = _items(doc, "priors")
    if items and isinstance(items[0], dict) and "offsets" in items[0]:
        grid = _grid_from(doc, cfg)
        priors = [prior_from_json(o) for o in items]
        kept = inference_filter(priors, grid, cfg.score_thresh, cfg.nms_iou_thresh, cfg.radius_e)
        result = [{"index": i, "score": priors[i].score,
                   "xs": [None if not v else float(x) for x, v in zip(l.xs, l.valid)]}
                  for i, l in kept]
    else:
        scores = np.array([float(o["score"]) for o in items])
        xs = np.stack([xs_from_json(o) for o in items]) if items else np.empty((0, 0))
        cand = [i for i in range(len(items)) if scores[i] > cfg.score_thresh]
        keep = lane_nms(xs[cand], scores[cand], cfg.nms_iou_thresh, cfg.radius_e) if cand else []
        result = [{"index": cand[k], "score": float(scores[cand[k]]),
                   "xs": [None if math.isnan(x) else float(x) for x in xs[cand[k]]]}
                  for k in keep]
    payload = {"score_thresh": cfg.score_thresh, "iou_thresh": cfg.nms_iou_thresh,
               "kept": result}
    human = f"kept {len(result)} lane(s): " + " ".join(
        f"#{r['index']}({r['score']:.3f})" for r in result
    )
    _emit(args, payload, human)


def cmd_assign(args):
    cfg = _config(args)
    pdoc = _read_json(args.priors)
    gdoc = _read_json(args.gt)
    grid = _grid_from(pdoc, cfg)
    priors = [prior_from_json(o) for o in _items(pdoc, "priors")]
    gts = []
    for o in _items(gdoc, "gts"):
        if isinstance(o, dict) and "offsets" in o:
            gts.append(prior_from_json(o))
        else:
            gts.append(Lane.from_xs(grid, xs_from_json(o)))
    res = assign(priors, gts, grid, cfg.assign())
    payload = {"grid": grid_to_json(grid), **res.as_dict(),
               "cost_matrix": res.cost_matrix.tolist()}
    lines = [f"{'gt':>3} {'k':>2}  priors (cost)"]
    for g, m in enumerate(res.matches):
        pairs = ", ".join(f"{j} ({c:.4f})" for j, c in m)
        lines.append(f"{g:>3} {res.dynamic_k[g]:>2}  {pairs}")
    lines.append(f"background: {int((res.prior_to_gt < 0).sum())} of {len(priors)} priors")
    _emit(args, payload, "\n".join(lines))


def cmd_synth(args):
    cfg = _config(args)
    channels = args.channels if args.channels is not None else 8
    grid = LaneGrid(cfg.n_points, 320, 800) if args.image_height is None else cfg.grid()
    scene = synth_scene(args.seed, grid, args.n_gts, args.n_priors, channels)
    paths = write_scene(scene, args.out, args.seed)
    _emit(args, {"seed": args.seed, "files": [str(p) for p in paths]},
          "\n".join(str(p) for p in paths))


def _parse_category_args(pairs):
    mapping = {}
    for item in pairs:
        name, sep, path = item.partition("=")
        if not sep or not name or not path:
            raise UsageError(f"--category-list expects NAME=FILE, got {item!r}")
        mapping[name] = path
    return mapping


def _load_tusimple(path):
    path = Path(path)
    files = sorted(path.glob("*.json")) if path.is_dir() else [path]
    records = {}
    for f in files:
        for r in read_tusimple_file(f):
            records[r.raw_file] = r
    return records


def _lanes(point_lanes, grid):
    return [l for l in culane_lanes_on_grid(point_lanes, grid) if l.n_valid >= 2]


def cmd_eval(args):
    cfg = _config(args)
    if args.format == "tusimple" and args.image_height is None and args.image_width is None \
            and (cfg.image_height, cfg.image_width) == (590.0, 1640.0):
        cfg = cfg.merged({"image_height": 720.0, "image_width": 1280.0})
    grid = cfg.grid()
    canvas = (math.ceil(grid.image_height), math.ceil(grid.image_width))
    ecfg = cfg.eval()
    categories = _parse_category_args(args.category_list)

    payload = {"format": args.format, "iou_mode": ecfg.iou_mode,
               "line_width": ecfg.line_width}
    if args.format == "culane":
        if args.list_file:
            names = load_list(args.list_file)
        else:
            root = Path(args.gt_dir)
            names = sorted(str(p.relative_to(root)).replace(".lines.txt", ".jpg")
                           for p in root.rglob("*.lines.txt"))
        images = []
        for name in names:
            gts = read_culane_file(culane_label_path(args.gt_dir, name))
            preds = read_culane_file(culane_label_path(args.pred_dir, name), missing_ok=True)
            images.append((_lanes(preds, grid), _lanes(gts, grid)))
    else:
        gt_records = _load_tusimple(args.gt_dir)
        pred_records = _load_tusimple(args.pred_dir)
        names = load_list(args.list_file) if args.list_file else list(gt_records)
        gt_list, pred_list = [], []
        for name in names:
            if name not in gt_records:
                raise LaneError(f"no ground truth for {name!r}")
            g = gt_records[name]
            p = pred_records.get(name) or TusimpleRecord(name, g.h_samples, [])
            gt_list.append(g)
            pred_list.append(p)
        ts = tusimple_eval(pred_list, gt_list, ecfg)
        payload["tusimple"] = ts.as_dict()
        images = [(_lanes(p.polylines(), grid), _lanes(g.polylines(), grid))
                  for p, g in zip(pred_list, gt_list)]

    labels = None
    if categories:
        image_cat = load_category_lists(categories)
        labels = [image_cat.get(n) for n in names]
    report, _ = evaluate_dataset(images, ecfg, canvas, jobs=args.jobs, categories=labels,
                                 known_categories=set(categories) or None)
    payload["n_images"] = len(images)
    payload.update(report.as_dict())

    if args.render_dir:
        for name, (preds, gts) in zip(names, images):
            stem = str(Path(name.lstrip("/\\")).with_suffix(""))
            render_image(Path(args.render_dir) / (stem + ".svg"), preds, gts, canvas,
                         ecfg.line_width, title=name)

    human = [f"{len(images)} images, {args.format}, iou_mode={ecfg.iou_mode}", report.table()]
    if "tusimple" in payload:
        t = payload["tusimple"]
        human.append(f"TuSimple accuracy {t['accuracy']:.4f}  FP {t['fp']:.4f}  FN {t['fn']:.4f}")
    for label, sub_report in report.categories.items():
        human.append(f"\n[{label}]\n{sub_report.table()}")
    _emit(args, payload, "\n".join(human))


def cmd_bench(args):
    cfg = _config(args)
    grid = LaneGrid(cfg.n_points, 590, 1640)
    images = synth_eval_images(args.seed, args.images, grid)
    ecfg = EvalConfig("mask", 30.0, cfg.eval_thresholds)
    t0 = time.perf_counter()
    report, _ = evaluate_dataset(images, ecfg, (590, 1640), jobs=args.jobs)
    eval_s = time.perf_counter() - t0

    rng = np.random.default_rng(args.seed)
    gt = rng.uniform(0, 1640, (args.liou_evals, cfg.n_points))
    pred = gt + rng.normal(0, 10, gt.shape)
    t0 = time.perf_counter()
    for p, g in zip(pred, gt):
        liou(p, g, e=cfg.radius_e)
    liou_s = time.perf_counter() - t0

    payload = {
        "jobs": args.jobs,
        "images": args.images,
        "eval_seconds": eval_s,
        "images_per_second": args.images / eval_s if eval_s > 0 else float("inf"),
        "mF1": report.mf1,
        "liou_evals": args.liou_evals,
        "liou_seconds": liou_s,
        "liou_evals_per_second": args.liou_evals / liou_s if liou_s > 0 else float("inf"),
    }
    human = (
        f"eval  {args.images} images in {eval_s:.3f} s "
        f"({payload['images_per_second']:.1f} img/s, jobs={args.jobs}, mF1={report.mf1:.4f})\n"
        f"liou  {args.liou_evals} gradient evals in {liou_s:.3f} s "
        f"({payload['liou_evals_per_second']:.0f} /s)"
    )
    _emit(args, payload, human)
    return payload


COMMANDS = {
    "eval": cmd_eval, "liou": cmd_liou, "nms": cmd_nms,
    "assign": cmd_assign, "synth": cmd_synth, "bench": cmd_bench,
}


def _fail(json_mode, kind, message, status):
    if json_mode:
        err = {"error": {"type": kind, "message": message, "exit_status": status}}
        print(json.dumps(err), file=sys.stderr)
    else:
        print(f"clrlane: error: {message}", file=sys.stderr)
    return status


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    json_mode = "--json" in argv
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.jobs < 1:
            raise UsageError("--jobs must be >= 1")
        COMMANDS[args.command](args)
    except UsageError as exc:
        if not json_mode:
            parser.print_usage(sys.stderr)
        return _fail(json_mode, "UsageError", str(exc), 2)
    except (LaneError, OSError, KeyError, TypeError, ValueError) as exc:
        kind = type(exc).__name__
        message = str(exc) if not isinstance(exc, KeyError) else f"missing field {exc}"
        return _fail(json_mode, kind, message, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
