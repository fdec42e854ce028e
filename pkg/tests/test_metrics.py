import math

import numpy as np
import pytest

from seglabel.errors import EmptySet, ShapeMismatch
from seglabel.metrics import (CoverageCriteria, directed_hausdorff, evaluate,
                              hausdorff, iou, point_set,
                              _directed_hausdorff_grid)
from seglabel.rasters import ClassMask

from conftest import random_mask


def brute_force_directed(a, b):
    best = 0.0
    for ax, ay in a:
        nearest = min(math.dist((ax, ay), (bx, by)) for bx, by in b)
        best = max(best, nearest)
    return best


def brute_force_iou(a, b):
    sa, sb = set(map(tuple, a)), set(map(tuple, b))
    if not sa and not sb:
        return 1.0
    if not sa or not sb:
        return 0.0
    return len(sa & sb) / len(sa | sb)


def test_iou_identity_and_disjoint():
    a = [(0, 0), (1, 0), (1, 1)]
    assert iou(a, a) == 1.0
    assert iou(a, [(5, 5)]) == 0.0
    assert iou([], []) == 1.0
    assert iou(a, []) == 0.0


def test_iou_shifted_blocks():
    block = [(x, y) for x in range(4) for y in range(4)]
    shifted = [(x + 2, y) for x, y in block]
    # intersection 8, union 24
    assert iou(block, shifted) == pytest.approx(1 / 3)


def test_directed_hausdorff_spot_values():
    assert directed_hausdorff([(0, 0)], [(0, 0)]) == 0.0
    assert directed_hausdorff([(0, 0)], [(3, 4)]) == 5.0
    assert directed_hausdorff([(0, 0), (0, 10)], [(0, 0)]) == 10.0
    with pytest.raises(EmptySet):
        directed_hausdorff([], [(0, 0)])


def test_hausdorff_spot_values():
    a = [(0, 0)]
    b = [(0, 0), (0, 10)]
    assert directed_hausdorff(a, b) == 0.0
    assert directed_hausdorff(b, a) == 10.0
    assert hausdorff(a, b) == 10.0
    assert hausdorff(b, a) == 10.0


def test_hausdorff_matches_brute_force_oracle(rng):
    for _ in range(50):
        ma = random_mask(rng, 32, 32, num_classes=1, fg_prob=0.1)
        mb = random_mask(rng, 32, 32, num_classes=1, fg_prob=0.1)
        a, b = point_set(ma, 1), point_set(mb, 1)
        if len(a) == 0 or len(b) == 0:
            continue
        expected = max(brute_force_directed(a, b), brute_force_directed(b, a))
        assert hausdorff(a, b) == pytest.approx(expected, abs=1e-9)
        assert iou(a, b) == brute_force_iou(a, b)


def test_grid_route_agrees_with_all_pairs(rng):
    for _ in range(20):
        ma = random_mask(rng, 24, 24, num_classes=1, fg_prob=0.15)
        mb = random_mask(rng, 24, 24, num_classes=1, fg_prob=0.15)
        a, b = point_set(ma, 1), point_set(mb, 1)
        if len(a) == 0 or len(b) == 0:
            continue
        assert _directed_hausdorff_grid(a, b) == pytest.approx(
            brute_force_directed(a, b), abs=1e-9
        )


def test_symmetry_and_identity_properties(rng):
    for _ in range(50):
        ma = random_mask(rng, 16, 16, num_classes=1, fg_prob=0.2)
        mb = random_mask(rng, 16, 16, num_classes=1, fg_prob=0.2)
        a, b = point_set(ma, 1), point_set(mb, 1)
        if len(a) == 0 or len(b) == 0:
            continue
        assert hausdorff(a, b) == hausdorff(b, a)
        assert directed_hausdorff(a, a) == 0.0
        assert hausdorff(a, b) >= directed_hausdorff(a, b)
        assert hausdorff(a, b) >= directed_hausdorff(b, a)
        assert 0.0 <= iou(a, b) <= 1.0
        assert iou(a, b) == iou(b, a)


def _mask_from_points(points, side=8):
    ids = np.zeros((side, side), dtype=np.uint8)
    for x, y in points:
        ids[y, x] = 1
    return ClassMask(ids)


def test_coverage_rule_strictness():
    crit = CoverageCriteria()
    assert not crit.passes(0.60, 5.0)   # IoU boundary: strictly greater required
    assert not crit.passes(0.70, 10.0)  # HD boundary: strictly less required
    assert crit.passes(0.61, 9.9)
    assert not crit.passes(0.9, None)   # unbounded HD never passes


def test_evaluate_aggregates(rng):
    # three pairs engineered to produce known (iou, hd) outcomes
    truth = _mask_from_points([(0, 0), (1, 0), (2, 0), (3, 0)])
    exact = _mask_from_points([(0, 0), (1, 0), (2, 0), (3, 0)])
    partial = _mask_from_points([(0, 0), (1, 0)])
    empty = ClassMask.zeros(8, 8)
    report = evaluate([exact, partial, empty], [truth, truth, truth], class_id=1)
    ious = [r.iou for r in report.records]
    assert ious[0] == 1.0 and ious[1] == 0.5 and ious[2] == 0.0
    assert report.records[2].hd is None
    assert report.recall == pytest.approx(2 / 3)
    assert report.mean_iou == pytest.approx(np.mean(ious))
    assert report.coverage_rate == pytest.approx(1 / 3)  # only the exact pair covers
    # aggregates recomputable from the records
    assert report.recall == sum(r.detected for r in report.records) / 3


def test_evaluate_mismatch_errors():
    m = ClassMask.zeros(4, 4)
    with pytest.raises(ShapeMismatch):
        evaluate([m], [m, m], class_id=1)
    with pytest.raises(ShapeMismatch):
        evaluate([m], [ClassMask.zeros(5, 5)], class_id=1)


def test_coverage_never_exceeds_recall(rng):
    preds = [random_mask(rng, 16, 16, 1, 0.2) for _ in range(30)]
    truths = [random_mask(rng, 16, 16, 1, 0.2) for _ in range(30)]
    report = evaluate(preds, truths, class_id=1)
    assert report.coverage_rate <= report.recall


def test_report_serialization(rng):
    preds = [random_mask(rng, 8, 8, 1, 0.3) for _ in range(5)]
    truths = [random_mask(rng, 8, 8, 1, 0.3) for _ in range(5)]
    report = evaluate(preds, truths, class_id=1)
    doc = report.to_jsonable()
    assert doc["resolution"] == {"height": 8, "width": 8}
    assert len(doc["records"]) == 5
    csv_text = report.to_csv()
    assert csv_text.splitlines()[0] == "image_id,iou,hd,detected,covered"
    assert len(csv_text.splitlines()) == 6
