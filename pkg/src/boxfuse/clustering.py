"""Locality-aware clustering of dense boxes with score-weighted merging."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .geometry import QuadBox, aabb, aabb_overlaps, iou_vertices, polygon_area

DEFAULT_CLUSTER_THRESHOLD = 0.5


class MergeError(ValueError):
    pass


def merge(g: QuadBox, p: QuadBox) -> QuadBox:
    """Score-weighted average of corresponding vertices; the merged score is the sum."""
    verts, total = _merge_raw(g.as_array(), g.score, p.as_array(), p.score)
    return QuadBox(tuple(map(tuple, verts)), total, p.class_id if p.class_id is not None else g.class_id)


def _merge_raw(gv: np.ndarray, gs: float, pv: np.ndarray, ps: float) -> tuple[np.ndarray, float]:
    total = gs + ps
    if total <= 0:
        raise MergeError("cannot merge two boxes with zero score")
    return (gs * gv + ps * pv) / total, total


@dataclass
class Cluster:
    members: list[QuadBox]
    representative: QuadBox
    cluster_id: int = 0
    image_id: str = ""
    class_id: Optional[int] = None

    @property
    def contributor_count(self) -> int:
        return len(self.members)

    @property
    def mean_score(self) -> float:
        return sum(b.score for b in self.members) / len(self.members)


def row_major_order(boxes: Sequence[QuadBox]) -> list[int]:
    """Indices sorted by center y, then center x, then vertices."""

    def key(i):
        cx, cy = boxes[i].center
        return (cy, cx, boxes[i].vertices)

    return sorted(range(len(boxes)), key=key)


def locality_aware_cluster(
    boxes: Sequence[QuadBox], th_iou: float = DEFAULT_CLUSTER_THRESHOLD
) -> list[Cluster]:
    """Group boxes with the locality-aware scan.

    Each pass seeds a cluster with the first remaining box (row-major order)
    and then scans every other remaining box once; a box joins when its IoU
    with the running merged box reaches ``th_iou``, and the running box is
    updated on the spot. Boxes left over seed later passes.
    """
    if not 0.0 < th_iou < 1.0:
        raise ValueError(f"th_iou must lie in (0, 1), got {th_iou}")
    if not boxes:
        return []
    order = row_major_order(boxes)
    ordered = [boxes[i] for i in order]
    verts = [b.vertices for b in ordered]
    arr = np.array(verts, dtype=np.float64)
    scores = [b.score for b in ordered]
    areas = [polygon_area(v) for v in verts]
    bounds = aabb(arr)

    remaining = np.arange(len(ordered))
    clusters: list[Cluster] = []
    while len(remaining):
        seed = int(remaining[0])
        pv, ps, pa = verts[seed], scores[seed], areas[seed]
        members = [seed]
        rest = remaining[1:]
        absorbed = np.zeros(len(rest), dtype=bool)
        pos = 0
        while pos < len(rest):
            # a box whose bounding box misses the running box has IoU 0
            xs, ys = zip(*pv)
            pbox = np.array([min(xs), min(ys), max(xs), max(ys)])
            cand = np.flatnonzero(aabb_overlaps(pbox, bounds[rest[pos:]])) + pos
            hit = -1
            for k in cand:
                g = rest[k]
                if iou_vertices(verts[g], pv, areas[g], pa) >= th_iou:
                    hit = int(k)
                    break
            if hit < 0:
                break
            g = int(rest[hit])
            merged, ps = _merge_raw(arr[g], scores[g], np.asarray(pv), ps)
            pv = QuadBox(tuple(map(tuple, merged))).vertices
            pa = polygon_area(pv) if len(pv) >= 3 else 0.0
            members.append(g)
            absorbed[hit] = True
            pos = hit + 1
        remaining = rest[~absorbed]
        member_boxes = [ordered[i] for i in members]
        rep = QuadBox(pv, ps, member_boxes[0].class_id)
        clusters.append(Cluster(member_boxes, rep, cluster_id=len(clusters), class_id=member_boxes[0].class_id))
    return clusters


def partition(boxes: Iterable[QuadBox]) -> dict[Optional[int], list[QuadBox]]:
    """Split boxes by class id; keys come back in a fixed order (None first)."""
    groups: dict[Optional[int], list[QuadBox]] = {}
    for b in boxes:
        groups.setdefault(b.class_id, []).append(b)
    return dict(sorted(groups.items(), key=lambda kv: (kv[0] is not None, kv[0] or 0)))


def cluster_partitioned(
    boxes: Sequence[QuadBox], th_iou: float = DEFAULT_CLUSTER_THRESHOLD, image_id: str = ""
) -> list[Cluster]:
    out: list[Cluster] = []
    for class_id, group in partition(boxes).items():
        for c in locality_aware_cluster(group, th_iou):
            c.cluster_id = len(out)
            c.image_id = image_id
            c.class_id = class_id
            out.append(c)
    return out
