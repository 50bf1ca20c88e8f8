"""Non-maximum suppression baselines for quadrilateral detections.

All functions take and return lists of :class:`QuadBox`. Score ties are
broken by the canonical vertex tuple so every result is deterministic.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .clustering import merge, partition, row_major_order
from .geometry import (
    QuadBox,
    aabb,
    aabb_iou_one_to_many,
    iou,
    iou_one_to_many,
    min_area_rect,
    quads_array,
)

SOFT_SIGMA = 0.5
SOFT_SCORE_FLOOR = 0.001
LOCALITY_MERGE_THRESHOLD = 0.5
LOCALITY_NMS_THRESHOLD = 0.2


def _check_threshold(t: float, name: str = "iou_threshold", upper_inclusive: bool = False) -> None:
    ok = 0.0 < t <= 1.0 if upper_inclusive else 0.0 < t < 1.0
    if not ok:
        raise ValueError(f"{name} must lie in (0, 1{']' if upper_inclusive else ')'}, got {t}")


def score_order(boxes: Sequence[QuadBox]) -> list[int]:
    return sorted(range(len(boxes)), key=lambda i: (-boxes[i].score, boxes[i].vertices))


def _greedy(boxes: Sequence[QuadBox], overlap: Callable[[int, np.ndarray], np.ndarray], threshold: float) -> list[QuadBox]:
    order = np.array(score_order(boxes), dtype=np.int64)
    keep = []
    while len(order):
        i = order[0]
        keep.append(boxes[i])
        rest = order[1:]
        if len(rest) == 0:
            break
        order = rest[overlap(i, rest) <= threshold]
    return keep


def standard_nms(boxes: Sequence[QuadBox], iou_threshold: float = 0.5) -> list[QuadBox]:
    """Greedy NMS on the axis-aligned bounding boxes of the quads."""
    _check_threshold(iou_threshold)
    if not boxes:
        return []
    rects = aabb(quads_array(boxes))
    return _greedy(boxes, lambda i, rest: aabb_iou_one_to_many(rects[i], rects[rest]), iou_threshold)


def polygon_nms(boxes: Sequence[QuadBox], iou_threshold: float = 0.5) -> list[QuadBox]:
    """Greedy NMS with exact quad IoU against every remaining box."""
    _check_threshold(iou_threshold)
    if not boxes:
        return []
    quads = quads_array(boxes)
    return _greedy(boxes, lambda i, rest: iou_one_to_many(quads[i], quads[rest]), iou_threshold)


def skew_nms(boxes: Sequence[QuadBox], iou_threshold: float = 0.5) -> list[QuadBox]:
    """Greedy NMS on rotated rectangles.

    Each quad is replaced by its minimum-area enclosing rectangle. Rectangles
    whose circumscribed circles are apart cannot overlap, which prunes most
    pairs before the exact overlap is computed.
    """
    _check_threshold(iou_threshold)
    if not boxes:
        return []
    rects = min_area_rect(quads_array(boxes))
    centers = rects.mean(axis=1)
    radii = np.linalg.norm(rects[:, 0] - rects[:, 2], axis=1) / 2.0

    def overlap(i, rest):
        out = np.zeros(len(rest))
        d = np.linalg.norm(centers[rest] - centers[i], axis=1)
        near = np.flatnonzero(d < radii[rest] + radii[i])
        if len(near):
            out[near] = iou_one_to_many(rects[i], rects[rest[near]])
        return out

    return _greedy(boxes, overlap, iou_threshold)


rotated_nms = skew_nms


def soft_nms(
    boxes: Sequence[QuadBox],
    method: str = "linear",
    iou_threshold: float = 0.3,
    sigma: float = SOFT_SIGMA,
    score_floor: float = SOFT_SCORE_FLOOR,
) -> list[QuadBox]:
    """Soft-NMS with polygon IoU; coordinates are untouched, only scores decay.

    linear: ``s *= 1 - IoU`` for neighbours with ``IoU >= iou_threshold``.
    gaussian: ``s *= exp(-IoU**2 / sigma)`` for every neighbour.
    """
    if method not in ("linear", "gaussian"):
        raise ValueError(f"unknown soft-NMS method {method!r}")
    if method == "linear":
        _check_threshold(iou_threshold, upper_inclusive=True)
    elif not sigma > 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    if not boxes:
        return []
    quads = quads_array(boxes)
    scores = np.array([b.score for b in boxes], dtype=np.float64)
    # rank by lexicographic vertex order to break equal-score ties
    lex = np.empty(len(boxes), dtype=np.int64)
    lex[sorted(range(len(boxes)), key=lambda i: boxes[i].vertices)] = np.arange(len(boxes))

    active = np.arange(len(boxes))
    out: list[QuadBox] = []
    while len(active):
        s = scores[active]
        top = np.flatnonzero(s == s.max())
        pick = top[np.argmin(lex[active[top]])] if len(top) > 1 else top[0]
        i = active[pick]
        out.append(boxes[i].with_score(scores[i]))
        active = np.delete(active, pick)
        if not len(active):
            break
        ov = iou_one_to_many(quads[i], quads[active])
        if method == "linear":
            decay = np.where(ov >= iou_threshold, 1.0 - ov, 1.0)
        else:
            decay = np.exp(-(ov * ov) / sigma)
        scores[active] = scores[active] * decay
        active = active[scores[active] >= score_floor]
    return out


def locality_aware_nms(
    boxes: Sequence[QuadBox],
    merge_threshold: float = LOCALITY_MERGE_THRESHOLD,
    nms_threshold: float = LOCALITY_NMS_THRESHOLD,
) -> list[QuadBox]:
    """Merge row-consecutive overlapping boxes, then polygon NMS.

    A merged run's score is the mean of its contributors, so it stays in [0, 1].
    """
    _check_threshold(merge_threshold, "merge_threshold")
    _check_threshold(nms_threshold, "nms_threshold")
    if not boxes:
        return []
    merged: list[QuadBox] = []
    p, count = None, 0
    for i in row_major_order(boxes):
        g = boxes[i]
        if p is not None and iou(g, p) >= merge_threshold:
            p = merge(g, p)
            count += 1
        else:
            if p is not None:
                merged.append(p.with_score(p.score / count))
            p, count = g, 1
    merged.append(p.with_score(p.score / count))
    return polygon_nms(merged, nms_threshold)


ALGORITHMS: dict[str, Callable[..., list[QuadBox]]] = {
    "standard": standard_nms,
    "soft-linear": lambda boxes, **kw: soft_nms(boxes, method="linear", **kw),
    "soft-gaussian": lambda boxes, **kw: soft_nms(boxes, method="gaussian", **kw),
    "skew": skew_nms,
    "rotated": rotated_nms,
    "polygon": polygon_nms,
    "locality": locality_aware_nms,
}


def get_algorithm(name: str) -> Callable[..., list[QuadBox]]:
    try:
        return ALGORITHMS[name]
    except KeyError:
        raise KeyError(f"unknown algorithm {name!r}; valid names: {', '.join(sorted(ALGORITHMS))}") from None


def per_class(fn: Callable[..., list[QuadBox]], boxes: Sequence[QuadBox], **kwargs) -> list[QuadBox]:
    """Run ``fn`` independently for each class id and concatenate in class order."""
    out: list[QuadBox] = []
    for group in partition(boxes).values():
        out.extend(fn(group, **kwargs))
    return out
