import math

import numpy as np
import pytest

from boxfuse.geometry import QuadBox, aabb, aabb_iou_one_to_many, iou, iou_matrix, min_area_rect, quads_array
from boxfuse.nms import (
    ALGORITHMS,
    get_algorithm,
    locality_aware_nms,
    per_class,
    polygon_nms,
    rotated_nms,
    skew_nms,
    soft_nms,
    standard_nms,
)
from conftest import random_box, rect, rotated_rect, square


def _rotate(box: QuadBox, deg: float) -> QuadBox:
    t = math.radians(deg)
    c, s = math.cos(t), math.sin(t)
    return QuadBox(tuple((c * x - s * y, s * x + c * y) for x, y in box.vertices), box.score, box.class_id)


def _trio():
    # unit boxes shifted by 0.25 and 0.5: IoU(A,B) = IoU(B,C) = 0.6, IoU(A,C) = 1/3
    return [square(0, 0, score=0.9), square(0.25, 0, score=0.8), square(0.5, 0, score=0.7)]


GREEDY = [standard_nms, skew_nms, polygon_nms]


@pytest.mark.parametrize("fn", GREEDY)
def test_empty_and_single(fn):
    assert fn([], 0.5) == []
    b = square(score=0.4)
    assert fn([b], 0.5) == [b]


@pytest.mark.parametrize("fn", GREEDY)
def test_forced_suppression(fn):
    a, b = square(score=0.9), square(0.25, 0, score=0.8)
    assert iou(a, b) == pytest.approx(0.6)
    assert fn([b, a], 0.5) == [a]


@pytest.mark.parametrize("fn", GREEDY)
def test_greedy_trio(fn):
    a, b, c = _trio()
    assert fn([c, a, b], 0.5) == [a, c]


def test_polygon_trio_rotated():
    boxes = [_rotate(b, 30) for b in _trio()]
    assert polygon_nms(boxes, 0.5) == [boxes[0], boxes[2]]
    assert skew_nms(boxes, 0.5) == [boxes[0], boxes[2]]


def test_standard_nms_ignores_rotation():
    # the axis-aligned hulls of two thin crossing boxes overlap heavily
    a = rotated_rect(0, 0, 10, 1, 45, score=0.9)
    b = rotated_rect(0, 0, 10, 1, -45, score=0.8)
    assert len(polygon_nms([a, b], 0.5)) == 2
    assert standard_nms([a, b], 0.5) == [a]


def test_skew_identical_and_rotated_square():
    r = rotated_rect(5, 5, 8, 2, 20, score=0.9)
    assert skew_nms([r, r.with_score(0.8)], 0.5) == [r]
    a = rotated_rect(0, 0, 2, 2, 0, score=0.9)
    b = rotated_rect(0, 0, 2, 2, 45, score=0.8)
    assert skew_nms([a, b], 0.5) == [a]
    assert rotated_nms is skew_nms


def test_soft_nms_linear_and_gaussian_examples():
    a, b = square(score=0.9), square(0.25, 0, score=0.8)
    out = soft_nms([a, b], "linear", iou_threshold=0.5)
    assert [o.score for o in out] == pytest.approx([0.9, 0.32])
    out = soft_nms([a, b], "gaussian", sigma=0.5)
    assert out[1].score == pytest.approx(0.8 * math.exp(-0.72))
    assert out[1].score == pytest.approx(0.3895, abs=1e-4)
    assert out[1].vertices == b.vertices


def test_soft_nms_single_and_empty():
    b = square(score=0.3)
    assert soft_nms([b], "linear") == [b]
    assert soft_nms([], "gaussian") == []


def test_soft_nms_floor_drops():
    a, b = square(score=0.9), square(0.0, 0, score=0.01)
    assert soft_nms([a, b], "gaussian", sigma=0.5, score_floor=0.005) == [a]


def test_soft_nms_rejects_bad_parameters():
    with pytest.raises(ValueError):
        soft_nms([square()], "gaussian", sigma=0)
    with pytest.raises(ValueError):
        soft_nms([square()], "linear", iou_threshold=0)
    with pytest.raises(ValueError):
        soft_nms([square()], "cubic")


def test_soft_nms_linear_threshold_one_keeps_scores(rng):
    boxes = [random_box(rng, span=50) for _ in range(60)]
    out = soft_nms(boxes, "linear", iou_threshold=1.0, score_floor=min(b.score for b in boxes))
    assert sorted((b.vertices, b.score) for b in out) == sorted((b.vertices, b.score) for b in boxes)


def test_soft_nms_changes_scores_only(rng):
    boxes = [random_box(rng, span=40) for _ in range(50)]
    verts = {b.vertices for b in boxes}
    for method in ("linear", "gaussian"):
        for b in soft_nms(boxes, method):
            assert b.vertices in verts


def test_locality_examples():
    b = square(score=0.5)
    assert locality_aware_nms([b]) == [b]
    assert locality_aware_nms([]) == []
    out = locality_aware_nms([square(score=0.6), square(score=0.6)])
    assert len(out) == 1 and out[0].vertices == square().vertices
    assert out[0].score == pytest.approx(0.6)


def test_locality_staircase_fold():
    # width-9 boxes shifted by 1: each neighbour pair has IoU 8/10
    scores = [0.9, 0.8, 0.7, 0.6, 0.5]
    boxes = [rect(k, 0, k + 9, 1, s) for k, s in enumerate(scores)]
    assert iou(boxes[0], boxes[1]) == pytest.approx(0.8)
    # left-to-right fold of the weighted average: x0 = sum(s_k * k) / sum(s_k)
    x0 = sum(k * s for k, s in enumerate(scores)) / sum(scores)
    assert x0 == pytest.approx(6 / 3.5)
    out = locality_aware_nms(boxes[::-1])
    assert len(out) == 1
    assert np.allclose(out[0].as_array(), rect(x0, 0, x0 + 9, 1).as_array(), atol=1e-12)
    assert out[0].score == pytest.approx(0.7)


def test_locality_rejects_bad_thresholds():
    with pytest.raises(ValueError):
        locality_aware_nms([square()], merge_threshold=1.0)
    with pytest.raises(ValueError):
        locality_aware_nms([square()], nms_threshold=0.0)


@pytest.mark.parametrize("fn", GREEDY)
def test_bad_threshold(fn):
    with pytest.raises(ValueError):
        fn([square()], 1.5)


def _overlap(name, boxes):
    q = quads_array(boxes)
    if name == "standard":
        r = aabb(q)
        return np.array([aabb_iou_one_to_many(r[i], r) for i in range(len(r))])
    if name == "skew":
        return iou_matrix(min_area_rect(q))
    return iou_matrix(q)


def random_scene(rng, n_max=200, axis=False):
    n = int(rng.integers(1, n_max + 1))
    out = []
    for _ in range(n):
        if axis:
            x, y = rng.uniform(0, 60, 2)
            w, h = rng.uniform(2, 20, 2)
            out.append(rect(x, y, x + w, y + h, rng.uniform(0.05, 1)))
        else:
            out.append(random_box(rng, span=60))
    return out


@pytest.mark.parametrize("name", ["standard", "skew", "polygon"])
def test_survivors_respect_threshold(rng, name):
    fn = get_algorithm(name)
    for _ in range(40):
        boxes = random_scene(rng, 80)
        t = float(rng.uniform(0.1, 0.9))
        kept = fn(boxes, t)
        assert set(kept) <= set(boxes)
        assert [b.score for b in kept] == sorted((b.score for b in kept), reverse=True)
        ov = _overlap(name, kept)
        np.fill_diagonal(ov, 0.0)
        assert ov.max(initial=0.0) <= t


def test_axis_aligned_agreement(rng):
    for _ in range(30):
        boxes = random_scene(rng, 80, axis=True)
        ref = standard_nms(boxes, 0.4)
        assert skew_nms(boxes, 0.4) == ref
        assert polygon_nms(boxes, 0.4) == ref


def test_input_order_does_not_matter(rng):
    boxes = random_scene(rng, 100)
    for name, fn in ALGORITHMS.items():
        a = fn(boxes)
        b = fn(list(reversed(boxes)))
        assert [(x.vertices, x.score) for x in a] == [(x.vertices, x.score) for x in b], name


def test_equal_scores_break_ties_on_vertices():
    a, b = square(0, 0, score=0.5), square(0.1, 0, score=0.5)
    assert polygon_nms([b, a], 0.5) == [a]
    assert standard_nms([b, a], 0.5) == [a]


def test_registry_errors():
    with pytest.raises(KeyError, match="valid names"):
        get_algorithm("nope")


def test_per_class_keeps_classes_apart():
    a = square(score=0.9, class_id=1)
    b = square(score=0.8, class_id=2)
    assert len(per_class(polygon_nms, [a, b], iou_threshold=0.5)) == 2
    assert len(polygon_nms([a, b], 0.5)) == 1
