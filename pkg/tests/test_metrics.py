from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import pq_oracle, random_map, random_pair, stats_as_dict
from panoptic_forge.errors import MetricsError
from panoptic_forge.label_space import STUFF, THING, ClassDef, DatasetSchema, build_joint_space
from panoptic_forge.metrics import (
    ClassStats,
    PqStats,
    class_quality,
    finalize,
    match_segments,
    matched_pairs,
    merge_stats,
)
from panoptic_forge.raster import PanopticMap


def _three_segment_map():
    pix = np.zeros((6, 6), dtype=np.uint32)
    pix[:2] = 1
    pix[2:4, :3] = 2
    pix[4:, 3:] = 3
    return PanopticMap.from_pixels(pix, {1: 1, 2: 2, 3: 2})


def test_perfect_prediction():
    m = _three_segment_map()
    s = match_segments(m, m)
    t = s.totals()
    assert (t.tp, t.fp, t.fn, t.iou) == (3, 0, 0, 3)


def test_low_iou_is_fp_and_fn():
    # 100-pixel gt, same-class prediction overlapping 50 of it plus 50 outside
    gt_pix = np.zeros((10, 20), dtype=np.uint32)
    gt_pix[:, :10] = 1
    gt_pix[:, 10:] = 9
    pred_pix = np.zeros((10, 20), dtype=np.uint32)
    pred_pix[:, 5:15] = 4
    gt = PanopticMap.from_pixels(gt_pix, {1: 1, 9: 2})
    pred = PanopticMap.from_pixels(pred_pix, {4: 1})
    s = match_segments(pred, gt)
    assert s[1] == ClassStats(Fraction(0), 0, 1, 1)
    oracle, _ = pq_oracle(pred, gt)
    assert oracle[1] == [0, 0, 1, 1]


def test_iou_excludes_gt_void():
    gt_pix = np.zeros((4, 4), dtype=np.uint32)
    gt_pix[:, :2] = 1
    pred_pix = np.zeros((4, 4), dtype=np.uint32)
    pred_pix[:, :3] = 5  # one column spills onto gt void
    s = match_segments(PanopticMap.from_pixels(pred_pix, {5: 1}), PanopticMap.from_pixels(gt_pix, {1: 1}))
    assert s[1] == ClassStats(Fraction(1), 1, 0, 0)


def test_prediction_on_void_is_not_fp():
    gt_pix = np.zeros((4, 4), dtype=np.uint32)
    gt_pix[:2] = 1
    pred_pix = gt_pix.copy()
    pred_pix[2:, :] = 7  # lies entirely on gt void
    s = match_segments(PanopticMap.from_pixels(pred_pix, {1: 1, 7: 2}), PanopticMap.from_pixels(gt_pix, {1: 1}))
    assert 2 not in s.per_class
    assert s[1].tp == 1


def test_void_exemption_boundary_is_strict():
    gt_pix = np.zeros((2, 4), dtype=np.uint32)
    gt_pix[:, 2:] = 1
    pred_pix = np.full((2, 4), 7, dtype=np.uint32)  # exactly half on void
    gt = PanopticMap.from_pixels(gt_pix, {1: 1})
    s = match_segments(PanopticMap.from_pixels(pred_pix, {7: 2}), gt)
    assert s[2].fp == 1


def test_crowd_regions():
    gt_pix = np.zeros((4, 4), dtype=np.uint32)
    gt_pix[:, :2] = 3
    gt = PanopticMap.from_pixels(gt_pix, {3: 1}, ignore=[3])
    pred = PanopticMap.from_pixels(gt_pix.copy(), {3: 1})
    s = match_segments(pred, gt)
    assert s.per_class == {}
    other = PanopticMap.from_pixels(gt_pix.copy(), {3: 2})
    assert match_segments(other, gt)[2].fp == 1


def test_size_mismatch():
    with pytest.raises(MetricsError):
        match_segments(PanopticMap.void(2, 2), PanopticMap.void(3, 2))


def test_class_quality_values():
    pq, sq, rq = class_quality(ClassStats(Fraction(4, 5), 1, 1, 0))
    assert pq == Fraction(8, 15) and sq == Fraction(4, 5) and rq == Fraction(2, 3)
    r = finalize(PqStats({1: ClassStats(Fraction(4, 5), 1, 1, 0)})).per_class[1]
    assert r.pq == pytest.approx(0.5333333333333333, abs=1e-15)
    assert r.sq == pytest.approx(0.8, abs=1e-15)
    assert r.rq == pytest.approx(0.6666666666666666, abs=1e-15)
    assert abs(r.pq - r.sq * r.rq) < 1e-12


def test_finalize_edge_cases():
    r = finalize(PqStats({1: ClassStats(Fraction(1), 1, 0, 0)}))
    assert (r.per_class[1].pq, r.per_class[1].sq, r.per_class[1].rq) == (1.0, 1.0, 1.0)
    r = finalize(PqStats({1: ClassStats(), 2: ClassStats(Fraction(0), 0, 2, 1)}))
    assert list(r.per_class) == [2]
    assert r.per_class[2].pq == r.per_class[2].sq == r.per_class[2].rq == 0.0
    assert r.all.n == 1


def test_all_void_prediction_against_car():
    gt_pix = np.zeros((4, 4), dtype=np.uint32)
    gt_pix[1:3, 1:3] = 5
    gt = PanopticMap.from_pixels(gt_pix, {5: 3})
    rep = finalize(match_segments(PanopticMap.void(4, 4), gt))
    assert rep.per_class[3].pq == 0.0 and rep.per_class[3].fn == 1


def test_things_and_stuff_means():
    schema = DatasetSchema("d", (ClassDef(1, "road", STUFF), ClassDef(2, "car", THING), ClassDef(3, "bus", THING)))
    space = build_joint_space([schema])
    road, bus, car = 1, 2, 3
    stats = PqStats(
        {
            road: ClassStats(Fraction(1, 2), 1, 0, 0),
            car: ClassStats(Fraction(1), 1, 0, 0),
            bus: ClassStats(Fraction(0), 0, 1, 1),
        }
    )
    rep = finalize(stats, space)
    assert rep.stuff.pq == 0.5 and rep.stuff.n == 1
    assert rep.things.pq == 0.5 and rep.things.n == 2
    assert rep.all.pq == pytest.approx(0.5)
    doc = rep.to_json(space)
    assert doc["per_class"]["1"]["name"] == "road"
    assert doc["things"]["pq"] == 50.0


def _random_stats(rng, n_classes=6):
    out = {}
    for c in range(1, n_classes + 1):
        if rng.random() < 0.6:
            tp = int(rng.integers(0, 5))
            out[c] = ClassStats(
                sum((Fraction(int(rng.integers(51, 101)), 100) for _ in range(tp)), Fraction(0)),
                tp,
                int(rng.integers(0, 4)),
                int(rng.integers(0, 4)),
            )
    return PqStats(out)


@given(st.integers(0, 2**32 - 1))
def test_merge_algebra(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (_random_stats(rng) for _ in range(3))
    assert merge_stats(a, PqStats()) == a
    assert merge_stats(a, b) == merge_stats(b, a)
    assert merge_stats(merge_stats(a, b), c) == merge_stats(a, merge_stats(b, c))


def test_merge_equals_single_pass_over_concatenation():
    rng = np.random.default_rng(7)
    pairs = [random_pair(rng, max_side=24) for _ in range(10)]
    merged = PqStats()
    for pred, gt in pairs:
        merged = merge_stats(merged, match_segments(pred, gt))
    # all ten images tiled side by side into one wide image
    h = max(g.height for _, g in pairs)
    tiles_p, tiles_g, cls_p, cls_g, crowd = [], [], {}, {}, []
    offset = 0
    for pred, gt in pairs:
        for m, tiles, cls in ((pred, tiles_p, cls_p), (gt, tiles_g, cls_g)):
            pad = np.zeros((h, m.width), dtype=np.uint32)
            pad[: m.height] = np.where(m.pixels > 0, m.pixels + offset, 0)
            tiles.append(pad)
            for s in m.segments:
                cls[s.segment_id + offset] = s.class_id
        crowd += [s.segment_id + offset for s in gt.segments if s.ignore]
        offset += 100_000
    big_pred = PanopticMap.from_pixels(np.hstack(tiles_p), cls_p)
    big_gt = PanopticMap.from_pixels(np.hstack(tiles_g), cls_g, crowd)
    assert match_segments(big_pred, big_gt) == merged


@settings(max_examples=150, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_matches_quadratic_oracle(seed):
    rng = np.random.default_rng(seed)
    pred, gt = random_pair(rng, max_side=32)
    fast = match_segments(pred, gt)
    oracle, oracle_matches = pq_oracle(pred, gt)
    assert stats_as_dict(fast) == oracle
    assert matched_pairs(pred, gt) == oracle_matches


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_self_comparison_is_perfect(seed):
    rng = np.random.default_rng(seed)
    m = random_map(rng, int(rng.integers(1, 40)), int(rng.integers(1, 40)), crowd_prob=0.2)
    rep = finalize(match_segments(m, m))
    assert all(r.pq == 1.0 for r in rep.per_class.values())
    assert all(r.fp == r.fn == 0 for r in rep.per_class.values())
