"""Panoptic, segmentation and recognition quality.

Per class, with matches defined by same class and IoU > 0.5::

    PQ = sum(IoU) / (TP + FP/2 + FN/2)
    SQ = sum(IoU) / TP
    RQ = TP / (TP + FP/2 + FN/2)

IoU sums are kept as exact fractions of pixel counts, so merging per-image
stats is exactly associative and commutative and the reduction order never
changes a result.
"""

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Mapping, Optional

import numpy as np

from panoptic_forge.errors import MetricsError
from panoptic_forge.label_space import STUFF, THING, JointLabelSpace
from panoptic_forge.raster import PanopticMap

VOID_EXEMPT_FRACTION = Fraction(1, 2)


@dataclass(frozen=True)
class ClassStats:
    iou: Fraction = Fraction(0)
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __add__(self, other: "ClassStats") -> "ClassStats":
        return ClassStats(self.iou + other.iou, self.tp + other.tp, self.fp + other.fp, self.fn + other.fn)

    @property
    def iou_sum(self) -> float:
        return float(self.iou)


@dataclass(frozen=True)
class PqStats:
    per_class: Mapping[int, ClassStats] = field(default_factory=dict)

    def __add__(self, other: "PqStats") -> "PqStats":
        return merge_stats(self, other)

    def __getitem__(self, class_id: int) -> ClassStats:
        return self.per_class.get(class_id, ClassStats())

    def totals(self) -> ClassStats:
        out = ClassStats()
        for k in sorted(self.per_class):
            out = out + self.per_class[k]
        return out

    def to_json(self) -> dict:
        return {
            str(k): {
                "iou_num": v.iou.numerator,
                "iou_den": v.iou.denominator,
                "tp": v.tp,
                "fp": v.fp,
                "fn": v.fn,
            }
            for k, v in sorted(self.per_class.items())
        }


def merge_stats(a: PqStats, b: PqStats) -> PqStats:
    out = dict(a.per_class)
    for k, v in b.per_class.items():
        out[k] = out[k] + v if k in out else v
    return PqStats({k: out[k] for k in sorted(out)})


def _index_of(ids: np.ndarray, pixels: np.ndarray) -> np.ndarray:
    # 0 -> void row, segment k (sorted) -> k + 1
    table = np.concatenate(([0], ids)).astype(np.uint32)
    return np.searchsorted(table, pixels.ravel()).astype(np.int64)


def contingency(pred: PanopticMap, gt: PanopticMap) -> np.ndarray:
    """(n_gt + 1) x (n_pred + 1) pixel counts; row/column 0 is void."""
    g_ids = np.array([s.segment_id for s in gt.segments], dtype=np.uint32)
    p_ids = np.array([s.segment_id for s in pred.segments], dtype=np.uint32)
    n_p = len(p_ids) + 1
    combined = _index_of(g_ids, gt.pixels) * n_p + _index_of(p_ids, pred.pixels)
    counts = np.bincount(combined, minlength=(len(g_ids) + 1) * n_p)
    return counts.reshape(len(g_ids) + 1, n_p)


def match_segments(pred: PanopticMap, gt: PanopticMap) -> PqStats:
    """Per-image stats from one contingency table.

    Ground-truth void is left out of every IoU denominator. Crowd (ignore)
    ground-truth segments are never matched and never count as FN. An
    unmatched prediction is not an FP when more than half of it lies on
    ground-truth void or on same-class crowd regions.
    """
    return _match(pred, gt)[0]


def matched_pairs(pred: PanopticMap, gt: PanopticMap):
    """Set of ``(gt_segment_id, pred_segment_id)`` true-positive matches."""
    return _match(pred, gt)[1]


def _match(pred, gt):
    if pred.pixels.shape != gt.pixels.shape:
        raise MetricsError(f"size mismatch: pred {pred.size} vs gt {gt.size}")
    table = contingency(pred, gt)
    gsegs, psegs = gt.segments, pred.segments
    stats: Dict[int, ClassStats] = {}

    def bump(cls, **kw):
        cur = stats.get(cls, ClassStats())
        stats[cls] = ClassStats(
            cur.iou + kw.get("iou", 0), cur.tp + kw.get("tp", 0), cur.fp + kw.get("fp", 0), cur.fn + kw.get("fn", 0)
        )

    void_overlap = table[0, 1:]
    gt_matched = set()
    pred_matched = set()
    pairs = set()
    rows, cols = np.nonzero(table[1:, 1:])
    for gi, pi in zip(rows.tolist(), cols.tolist()):
        g, p = gsegs[gi], psegs[pi]
        if g.ignore or g.class_id != p.class_id:
            continue
        inter = int(table[gi + 1, pi + 1])
        union = g.area + p.area - inter - int(void_overlap[pi])
        if 2 * inter > union:
            if gi in gt_matched or pi in pred_matched:
                raise RuntimeError("IoU > 0.5 matched a segment twice")
            gt_matched.add(gi)
            pred_matched.add(pi)
            pairs.add((g.segment_id, p.segment_id))
            bump(g.class_id, iou=Fraction(inter, union), tp=1)

    for gi, g in enumerate(gsegs):
        if not g.ignore and gi not in gt_matched:
            bump(g.class_id, fn=1)

    crowd_rows = {}
    for gi, g in enumerate(gsegs):
        if g.ignore:
            crowd_rows.setdefault(g.class_id, []).append(gi + 1)
    for pi, p in enumerate(psegs):
        if pi in pred_matched:
            continue
        overlap = int(void_overlap[pi])
        for r in crowd_rows.get(p.class_id, ()):
            overlap += int(table[r, pi + 1])
        if Fraction(overlap, p.area) > VOID_EXEMPT_FRACTION:
            continue
        bump(p.class_id, fp=1)

    return PqStats({k: stats[k] for k in sorted(stats)}), pairs


@dataclass(frozen=True)
class ClassResult:
    pq: float
    sq: float
    rq: float
    tp: int
    fp: int
    fn: int
    iou_sum: float


@dataclass(frozen=True)
class GroupResult:
    pq: float
    sq: float
    rq: float
    n: int


@dataclass(frozen=True)
class PqReport:
    per_class: Mapping[int, ClassResult]
    all: GroupResult
    things: Optional[GroupResult] = None
    stuff: Optional[GroupResult] = None

    def to_json(self, space: Optional[JointLabelSpace] = None) -> dict:
        """Percentages rounded to one decimal, as in published result tables."""

        def pct(x):
            return round(100.0 * x, 1)

        def group(g):
            if g is None:
                return None
            return {"pq": pct(g.pq), "sq": pct(g.sq), "rq": pct(g.rq), "n": g.n}

        classes = {}
        for k, r in sorted(self.per_class.items()):
            item = {"pq": pct(r.pq), "sq": pct(r.sq), "rq": pct(r.rq), "tp": r.tp, "fp": r.fp, "fn": r.fn}
            if space is not None and 1 <= k <= space.num_classes:
                e = space.entry(k)
                item["name"] = e.name
                item["category"] = e.category
            classes[str(k)] = item
        out = {"all": group(self.all), "per_class": classes}
        if self.things is not None:
            out["things"] = group(self.things)
            out["stuff"] = group(self.stuff)
        return out


def class_quality(s: ClassStats):
    """Exact (PQ, SQ, RQ) fractions for one class."""
    denom = 2 * s.tp + s.fp + s.fn
    if denom == 0:
        raise MetricsError("class has no segments")
    pq = 2 * s.iou / denom
    sq = s.iou / s.tp if s.tp else Fraction(0)
    rq = Fraction(2 * s.tp, denom)
    return pq, sq, rq


def _mean(results):
    if not results:
        return GroupResult(0.0, 0.0, 0.0, 0)
    n = len(results)
    return GroupResult(
        sum(r.pq for r in results) / n,
        sum(r.sq for r in results) / n,
        sum(r.rq for r in results) / n,
        n,
    )


def finalize(stats: PqStats, space: Optional[JointLabelSpace] = None) -> PqReport:
    """Per-class and mean PQ/SQ/RQ; classes without any segment are skipped.

    With a ``space`` the means are also split into things and stuff.
    """
    per_class = {}
    for k in sorted(stats.per_class):
        s = stats.per_class[k]
        if s.tp == s.fp == s.fn == 0:
            continue
        pq, sq, rq = class_quality(s)
        per_class[k] = ClassResult(float(pq), float(sq), float(rq), s.tp, s.fp, s.fn, float(s.iou))
    all_group = _mean(list(per_class.values()))
    if space is None:
        return PqReport(per_class, all_group)
    cats = {k: space.category_of(k) for k in per_class}
    things = _mean([r for k, r in per_class.items() if cats[k] == THING])
    stuff = _mean([r for k, r in per_class.items() if cats[k] == STUFF])
    return PqReport(per_class, all_group, things, stuff)
