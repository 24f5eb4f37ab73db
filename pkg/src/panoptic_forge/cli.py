"""Command-line entry point.

Exit codes: 0 success, 1 bad input or usage, 2 internal invariant failure.
Every output file is written to a temp file and renamed into place.
"""

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from panoptic_forge import raster
from panoptic_forge.data_plan import DatasetStats, LrSchedule, lr_at, plan_epoch
from panoptic_forge.errors import PanopticError
from panoptic_forge.fusion import FusionConfig, instances_from_json, panoptic_fuse
from panoptic_forge.label_space import JointLabelSpace, build_joint_space, load_rules, load_schemas, remap_panoptic
from panoptic_forge.metrics import PqReport, PqStats, finalize, match_segments, merge_stats
from panoptic_forge.raster import (
    PanopticMap,
    atomic_write_bytes,
    dump_json_bytes,
    read_logits,
    read_panoptic,
    write_logits,
    write_panoptic,
)
from panoptic_forge.tta import merge_predictions, upsample_panoptic

log = logging.getLogger("panoptic_forge")

WORKERS_ENV = "PANOPTIC_FORGE_WORKERS"


class UsageError(PanopticError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


# -- helpers -----------------------------------------------------------------------

def parse_size(text: str):
    try:
        w, h = text.lower().split("x")
        size = (int(w), int(h))
    except ValueError:
        raise UsageError(f"size must look like WxH, got {text!r}") from None
    if size[0] <= 0 or size[1] <= 0:
        raise UsageError(f"size must be positive, got {text!r}")
    return size


def resolve_workers(flag: int) -> int:
    env = os.environ.get(WORKERS_ENV)
    workers = flag
    if env:
        try:
            workers = int(env)
        except ValueError:
            raise UsageError(f"{WORKERS_ENV}={env!r} is not an integer") from None
    if workers < 1:
        raise UsageError("worker count must be >= 1")
    return workers


def _load_json(path):
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def _require_file(path, what):
    if not Path(path).is_file():
        raise UsageError(f"{what} {path} does not exist")


def _require_dir(path, what):
    if not Path(path).is_dir():
        raise UsageError(f"{what} {path} is not a directory")


def panoptic_pngs(directory) -> List[str]:
    """PNG file names in ``directory`` that have a JSON sidecar, sorted."""
    d = Path(directory)
    return sorted(p.name for p in d.glob("*.png") if raster.sidecar_json(p).is_file())


# -- evaluation ---------------------------------------------------------------------

def _evaluate_one(args):
    name, pred_dir, gt_dir = args
    gt = read_panoptic(Path(gt_dir) / name)
    pred_path = Path(pred_dir) / name
    if pred_path.is_file() and raster.sidecar_json(pred_path).is_file():
        pred = read_panoptic(pred_path)
    else:
        pred = PanopticMap.void(gt.width, gt.height)
    return match_segments(pred, gt)


def evaluate_stats(pred_dir, gt_dir, workers: int = 1) -> PqStats:
    """Sum of per-image stats, reduced in filename order regardless of ``workers``."""
    names = panoptic_pngs(gt_dir)
    available = set(panoptic_pngs(pred_dir)) if Path(pred_dir).is_dir() else set()
    for name in names:
        if name not in available:
            log.warning("no prediction for %s; its ground-truth segments count as false negatives", name)
    extra = sorted(available - set(names))
    if extra:
        log.warning("ignoring %d predictions without ground truth", len(extra))
    jobs = [(n, str(pred_dir), str(gt_dir)) for n in names]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            per_image = list(pool.map(_evaluate_one, jobs))
    else:
        per_image = [_evaluate_one(j) for j in jobs]
    total = PqStats()
    for s in per_image:
        total = merge_stats(total, s)
    log.info("evaluated %d images", len(names))
    return total


def evaluate_dir(pred_dir, gt_dir, space: Optional[JointLabelSpace] = None, workers: int = 1) -> PqReport:
    return finalize(evaluate_stats(pred_dir, gt_dir, workers), space)


# -- subcommands ------------------------------------------------------------------

def cmd_evaluate(args):
    _require_dir(args.gt, "ground-truth directory")
    space = None
    if args.space:
        _require_file(args.space, "label space")
        space = JointLabelSpace.load(args.space)
    workers = resolve_workers(args.workers)
    stats = evaluate_stats(args.pred, args.gt, workers)
    report = finalize(stats, space)
    doc = report.to_json(space)
    atomic_write_bytes(args.report, dump_json_bytes(doc))
    a = report.all
    print(f"PQ {100 * a.pq:.1f}  SQ {100 * a.sq:.1f}  RQ {100 * a.rq:.1f}  ({a.n} classes)", file=sys.stderr)
    return 0


def cmd_remap(args):
    _require_dir(args.schema_dir, "schema directory")
    _require_dir(args.inp, "input directory")
    schemas = load_schemas(args.schema_dir)
    if not schemas:
        raise UsageError(f"no schema documents in {args.schema_dir}")
    rules = []
    if args.rules:
        _require_file(args.rules, "rules file")
        rules = load_rules(args.rules)
    space = build_joint_space(schemas, rules)
    out = Path(args.out)
    atomic_write_bytes(out / "space.json", space.dumps())
    names = panoptic_pngs(args.inp)
    for name in names:
        src = Path(args.inp) / name
        record = _load_json(raster.sidecar_json(src))
        dataset = args.dataset or record.get("dataset_id")
        if dataset is None:
            if len(schemas) != 1:
                raise UsageError(f"{name}: no dataset_id in the record; pass --dataset")
            dataset = schemas[0].dataset_id
        joint = remap_panoptic(read_panoptic(src, record), dataset, space)
        write_panoptic(joint, out / name)
    print(
        f"joint space: {space.num_things} thing + {space.num_stuff} stuff classes; remapped {len(names)} maps",
        file=sys.stderr,
    )
    return 0


def cmd_fuse(args):
    _require_file(args.sem, "semantic logits")
    sem = read_logits(args.sem)
    instances = []
    if args.instances:
        _require_file(args.instances, "instance file")
        instances = instances_from_json(
            _load_json(args.instances), Path(args.instances).parent, raster.read_tensor
        )
    config = FusionConfig()
    if args.config:
        _require_file(args.config, "fusion config")
        config = FusionConfig.from_json(_load_json(args.config))
    space = JointLabelSpace.load(args.space) if args.space else None
    pmap = panoptic_fuse(sem, instances, config, space)
    write_panoptic(pmap, args.out)
    print(f"{len(pmap.segments)} segments written to {args.out}", file=sys.stderr)
    return 0


def _load_stats(path) -> List[DatasetStats]:
    doc = _load_json(path)
    if isinstance(doc, dict):
        return [DatasetStats(str(k), int(v)) for k, v in doc.items()]
    return [DatasetStats(str(d["name"]), int(d["train_size"])) for d in doc]


def cmd_plan_epoch(args):
    _require_file(args.stats, "stats file")
    plan = plan_epoch(_load_stats(args.stats), args.anchor, args.factor, args.seed)
    atomic_write_bytes(args.out, (json.dumps(plan.to_json(), separators=(",", ":")) + "\n").encode())
    print(f"epoch of {len(plan)} items written to {args.out}", file=sys.stderr)
    return 0


def cmd_lr_schedule(args):
    schedule = LrSchedule()
    if args.config:
        _require_file(args.config, "schedule config")
        schedule = LrSchedule(**_load_json(args.config))
    print("iter\tlr")
    for it in args.iters:
        print(f"{it}\t{lr_at(it, schedule):.6g}")
    return 0


def _parse_variant(text):
    parts = text.rsplit(":", 2)
    if len(parts) != 3 or parts[2] not in ("flip", "none"):
        raise UsageError(f"variant must be PATH:SCALE:flip|none, got {text!r}")
    path, scale, flip = parts
    try:
        scale = float(scale)
    except ValueError:
        raise UsageError(f"bad scale in variant {text!r}") from None
    _require_file(path, "variant")
    return read_logits(path), scale, flip == "flip"


def cmd_tta_merge(args):
    variants = [_parse_variant(v) for v in args.variants]
    merged = merge_predictions(variants, parse_size(args.target))
    write_logits(args.out, merged)
    print(f"merged {len(variants)} variants into {args.out}", file=sys.stderr)
    return 0


def cmd_upsample(args):
    _require_file(args.inp, "panoptic PNG")
    pmap = read_panoptic(args.inp)
    out = args.out or str(Path(args.inp).with_name(Path(args.inp).stem + "_up.png"))
    write_panoptic(upsample_panoptic(pmap, parse_size(args.target)), out)
    print(f"upsampled to {args.target}: {out}", file=sys.stderr)
    return 0


def cmd_inspect(args):
    path = Path(args.file)
    _require_file(path, "file")
    data = path.read_bytes()
    if data[:4] == raster.TENSOR_MAGIC:
        arr = raster.decode_tensor(data)
        info = {
            "kind": "tensor",
            "dtype": str(arr.dtype),
            "shape": list(arr.shape),
            "min": float(arr.min()) if arr.size else None,
            "max": float(arr.max()) if arr.size else None,
        }
    elif path.suffix.lower() == ".png":
        if raster.sidecar_json(path).is_file():
            pmap = read_panoptic(path)
            segs = [
                {"id": s.segment_id, "class": s.class_id, "area": s.area, "ignore": s.ignore}
                for s in pmap.segments
            ]
            void = int((pmap.pixels == 0).sum())
        else:
            ids = raster.read_png_ids(path)
            u, c = np.unique(ids[ids != 0], return_counts=True)
            segs = [{"id": int(i), "area": int(a)} for i, a in zip(u, c)]
            void = int((ids == 0).sum())
            pmap = PanopticMap.void(ids.shape[1], ids.shape[0])
        info = {"kind": "panoptic", "width": pmap.width, "height": pmap.height, "void_area": void, "segments": segs}
    else:
        raise UsageError(f"{path}: not a PTNS tensor or panoptic PNG")
    sys.stdout.write(json.dumps(info, indent=2) + "\n")
    return 0


# -- parser -------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="panoptic-forge", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("remap", help="build the joint label space and remap panoptic maps into it")
    s.add_argument("--schema-dir", required=True)
    s.add_argument("--rules")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--dataset", help="dataset id for maps whose record has none")
    s.set_defaults(func=cmd_remap)

    s = sub.add_parser("fuse", help="fuse semantic logits and instances into a panoptic map")
    s.add_argument("--sem", required=True)
    s.add_argument("--instances")
    s.add_argument("--config")
    s.add_argument("--space")
    s.add_argument("--out", required=True, help="output PNG; the JSON record goes next to it")
    s.set_defaults(func=cmd_fuse)

    s = sub.add_parser("evaluate", help="PQ/SQ/RQ of a prediction directory")
    s.add_argument("--gt", required=True)
    s.add_argument("--pred", required=True)
    s.add_argument("--space")
    s.add_argument("--report", required=True)
    s.add_argument("--workers", type=int, default=1)
    s.set_defaults(func=cmd_evaluate)

    s = sub.add_parser("plan-epoch", help="write a replicated, shuffled epoch plan")
    s.add_argument("--stats", required=True)
    s.add_argument("--anchor", required=True)
    s.add_argument("--factor", type=int, default=3)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_plan_epoch)

    s = sub.add_parser("lr-schedule", help="print the learning rate at given iterations")
    s.add_argument("--iters", type=int, nargs="+", required=True)
    s.add_argument("--config")
    s.set_defaults(func=cmd_lr_schedule)

    s = sub.add_parser("tta-merge", help="merge scaled/flipped semantic predictions")
    s.add_argument("--variants", nargs="+", required=True, metavar="PATH:SCALE:flip|none")
    s.add_argument("--target", required=True, metavar="WxH")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_tta_merge)

    s = sub.add_parser("upsample", help="nearest-neighbour upsample a panoptic map")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--target", required=True, metavar="WxH")
    s.add_argument("--out")
    s.set_defaults(func=cmd_upsample)

    s = sub.add_parser("inspect", help="summarize a tensor file or panoptic PNG")
    s.add_argument("file")
    s.set_defaults(func=cmd_inspect)
    return p


def run(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(
            level=logging.INFO if args.verbose else logging.WARNING,
            format="%(levelname)s: %(message)s",
            stream=sys.stderr,
        )
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        return args.func(args)
    except (PanopticError, OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help
        return 0 if exc.code in (0, None) else 1
    except Exception as exc:
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
