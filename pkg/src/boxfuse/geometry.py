"""Convex quadrilateral geometry: area, clipping, IoU.

Two IoU routes live here. ``iou`` works on a single pair through
Sutherland-Hodgman clipping and is the readable reference. ``iou_pairs`` /
``iou_matrix`` evaluate many pairs at once by collecting the vertices of the
(convex) intersection polygon, sorting them by angle and applying the
shoelace formula; the NMS and clustering loops use those.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

AREA_EPS = 1e-9  # boxes below this area are treated as noise
INTER_EPS = 1e-12  # intersections below this area count as touching only
_CHUNK = 32768


class InvalidPolygonError(ValueError):
    pass


def _cross(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(points: Sequence[Sequence[float]]) -> list[tuple[float, float]]:
    """Monotone-chain hull, counter-clockwise (positive signed area), no collinear points."""
    pts = sorted(set((float(x), float(y)) for x, y in points))
    if len(pts) <= 2:
        return pts
    lower: list[tuple[float, float]] = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[tuple[float, float]] = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def _start_index(pts: Sequence[tuple[float, float]]) -> int:
    # vertex nearest the top-left: smallest x + y, then smallest x
    return min(range(len(pts)), key=lambda i: (pts[i][0] + pts[i][1], pts[i][0]))


def canonicalize(points: Sequence[Sequence[float]]) -> tuple[tuple[float, float], ...]:
    """Return 4 vertices: convex, positive orientation, starting nearest the top-left.

    Crossed ("bowtie") or concave orderings are repaired with the convex hull.
    A triangular hull is padded with the midpoint of its longest edge so the
    area is preserved. Fully degenerate input keeps its points in sorted order.
    """
    if len(points) != 4:
        raise InvalidPolygonError(f"a quad needs 4 vertices, got {len(points)}")
    hull = convex_hull(points)
    if len(hull) == 3:
        lengths = [
            (hull[(i + 1) % 3][0] - hull[i][0]) ** 2 + (hull[(i + 1) % 3][1] - hull[i][1]) ** 2
            for i in range(3)
        ]
        i = int(np.argmax(lengths))
        a, b = hull[i], hull[(i + 1) % 3]
        hull.insert(i + 1, ((a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0))
    elif len(hull) < 3:
        hull = sorted((float(x), float(y)) for x, y in points)
        return tuple(hull)  # type: ignore[return-value]
    k = _start_index(hull)
    return tuple(hull[k:] + hull[:k])  # type: ignore[return-value]


@dataclass(frozen=True)
class QuadBox:
    """One scored detection. Vertices are canonicalized on construction."""

    vertices: tuple[tuple[float, float], ...]
    score: float = 1.0
    class_id: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "vertices", canonicalize(self.vertices))
        object.__setattr__(self, "score", float(self.score))
        if not self.score >= 0:
            raise ValueError(f"score must be >= 0, got {self.score}")

    @classmethod
    def from_flat(cls, quad: Sequence[float], score: float = 1.0, class_id: Optional[int] = None) -> "QuadBox":
        if len(quad) != 8:
            raise InvalidPolygonError(f"flat quad needs 8 numbers, got {len(quad)}")
        pts = tuple((float(quad[2 * i]), float(quad[2 * i + 1])) for i in range(4))
        return cls(pts, score, class_id)

    def flat(self) -> list[float]:
        return [c for v in self.vertices for c in v]

    def as_array(self) -> np.ndarray:
        return np.asarray(self.vertices, dtype=np.float64)

    @property
    def center(self) -> tuple[float, float]:
        xs, ys = zip(*self.vertices)
        return sum(xs) / 4.0, sum(ys) / 4.0

    @property
    def area(self) -> float:
        return polygon_area(self.vertices)

    def with_score(self, score: float) -> "QuadBox":
        return QuadBox(self.vertices, score, self.class_id)


@dataclass(frozen=True)
class ImageMeta:
    width: float
    height: float
    image_id: str = ""

    def __post_init__(self):
        if not (self.width > 0 and self.height > 0):
            raise ValueError(f"image dimensions must be positive, got {self.width}x{self.height}")


def polygon_area(vertices: Sequence[Sequence[float]]) -> float:
    """Shoelace area, orientation independent."""
    n = len(vertices)
    if n < 3:
        raise InvalidPolygonError(f"polygon needs at least 3 points, got {n}")
    s = 0.0
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return abs(s) / 2.0


def convex_clip(subject: Sequence[Sequence[float]], clip: Sequence[Sequence[float]]) -> list[tuple[float, float]]:
    """Clip ``subject`` against the convex polygon ``clip`` (Sutherland-Hodgman).

    Either orientation of ``clip`` is accepted. Returns ``[]`` when the
    intersection has fewer than 3 vertices.
    """
    if len(subject) < 3 or len(clip) < 3:
        return []
    signed = 0.0
    for i in range(len(clip)):
        signed += clip[i][0] * clip[(i + 1) % len(clip)][1] - clip[(i + 1) % len(clip)][0] * clip[i][1]
    if signed == 0.0:
        return []
    sign = 1.0 if signed > 0 else -1.0

    output = [(float(x), float(y)) for x, y in subject]
    cp1 = clip[-1]
    for cp2 in clip:
        if not output:
            return []
        ex, ey = cp2[0] - cp1[0], cp2[1] - cp1[1]

        def side(p):
            return sign * (ex * (p[1] - cp1[1]) - ey * (p[0] - cp1[0]))

        def intersect(s, e, ds, de):
            t = ds / (ds - de)
            return (s[0] + t * (e[0] - s[0]), s[1] + t * (e[1] - s[1]))

        inputs = output
        output = []
        s = inputs[-1]
        ds = side(s)
        for e in inputs:
            de = side(e)
            if de >= 0:
                if ds < 0:
                    output.append(intersect(s, e, ds, de))
                output.append(e)
            elif ds >= 0:
                if ds > 0:
                    output.append(intersect(s, e, ds, de))
            s, ds = e, de
        cp1 = cp2
    return output if len(output) >= 3 else []


def iou(a: QuadBox, b: QuadBox) -> float:
    va, vb = a.vertices, b.vertices
    if len(va) < 3 or len(vb) < 3:
        return 0.0
    return iou_vertices(va, vb)


def iou_vertices(va, vb, area_a: Optional[float] = None, area_b: Optional[float] = None) -> float:
    """IoU of two canonical vertex tuples (the scalar path behind :func:`iou`)."""
    area_a = polygon_area(va) if area_a is None else area_a
    area_b = polygon_area(vb) if area_b is None else area_b
    if area_a < AREA_EPS or area_b < AREA_EPS:
        return 0.0
    if va == vb:
        return 1.0
    if vb < va:  # fixed argument order keeps the result exactly symmetric
        va, vb, area_a, area_b = vb, va, area_b, area_a
    inter_poly = convex_clip(va, vb)
    inter = polygon_area(inter_poly) if inter_poly else 0.0
    if inter < INTER_EPS:
        return 0.0
    return min(1.0, max(0.0, inter / (area_a + area_b - inter)))


# ---------------------------------------------------------------- vectorized


def quads_array(boxes: Iterable[QuadBox]) -> np.ndarray:
    arr = np.array([b.vertices for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4, 2)


_NEXT4 = np.array([1, 2, 3, 0])
_NEXT24 = np.r_[1:24, 0]


def signed_areas(quads: np.ndarray) -> np.ndarray:
    x, y = quads[..., 0], quads[..., 1]
    return 0.5 * np.sum(x * y[..., _NEXT4] - x[..., _NEXT4] * y, axis=-1)


def canonicalize_array(quads: np.ndarray) -> np.ndarray:
    """Vectorized orientation + start-vertex fix for already convex quads."""
    q = np.array(quads, dtype=np.float64).reshape(-1, 4, 2)
    neg = signed_areas(q) < 0
    q[neg] = q[neg][:, ::-1]
    key = q[..., 0] + q[..., 1]
    # ties resolved on x, mirroring _start_index
    order = np.lexsort((q[..., 0], key), axis=-1)
    start = order[:, 0]
    idx = (start[:, None] + np.arange(4)[None, :]) % 4
    return np.take_along_axis(q, idx[..., None], axis=1)


def _lex_greater(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    fa = a.reshape(len(a), -1)
    fb = b.reshape(len(b), -1)
    diff = fa != fb
    first = np.argmax(diff, axis=1)
    rows = np.arange(len(fa))
    return diff[rows, first] & (fa[rows, first] > fb[rows, first])


def _inside(points: np.ndarray, poly: np.ndarray, tol: np.ndarray) -> np.ndarray:
    # points (P, k, 2) against convex positively oriented poly (P, 4, 2)
    edges = poly[:, _NEXT4] - poly
    rel = points[:, :, None, :] - poly[:, None, :, :]
    cr = edges[:, None, :, 0] * rel[..., 1] - edges[:, None, :, 1] * rel[..., 0]
    return np.all(cr >= -tol[:, None, None], axis=2)


def _intersection_area(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    p = len(a)
    lo = np.minimum(a.min(axis=1), b.min(axis=1))
    hi = np.maximum(a.max(axis=1), b.max(axis=1))
    scale = np.max(hi - lo, axis=1)
    tol = 1e-12 * scale * scale + 1e-300

    in_a = _inside(a, b, tol)
    in_b = _inside(b, a, tol)

    r = a[:, _NEXT4] - a  # (P,4,2)
    s = b[:, _NEXT4] - b
    qp = b[:, None, :, :] - a[:, :, None, :]  # (P,4,4,2)
    denom = r[:, :, None, 0] * s[:, None, :, 1] - r[:, :, None, 1] * s[:, None, :, 0]
    ok = np.abs(denom) > 1e-300
    safe = np.where(ok, denom, 1.0)
    t = (qp[..., 0] * s[:, None, :, 1] - qp[..., 1] * s[:, None, :, 0]) / safe
    u = (qp[..., 0] * r[:, :, None, 1] - qp[..., 1] * r[:, :, None, 0]) / safe
    hit = ok & (t >= 0) & (t <= 1) & (u >= 0) & (u <= 1)
    cross_pts = a[:, :, None, :] + t[..., None] * r[:, :, None, :]

    pts = np.concatenate([a, b, cross_pts.reshape(p, 16, 2)], axis=1)  # (P,24,2)
    mask = np.concatenate([in_a, in_b, hit.reshape(p, 16)], axis=1)
    count = mask.sum(axis=1)

    w = mask[..., None]
    centroid = np.where(count[:, None] > 0, (pts * w).sum(axis=1) / np.maximum(count, 1)[:, None], 0.0)
    d = pts - centroid[:, None, :]
    ang = np.where(mask, np.arctan2(d[..., 1], d[..., 0]), np.inf)
    order = np.argsort(ang, axis=1, kind="stable")
    # pad slots past the valid count with the last valid point (adds zero area)
    slot = np.minimum(np.arange(24)[None, :], np.maximum(count - 1, 0)[:, None])
    rows = np.arange(p)[:, None]
    sp = pts[rows, order[rows, slot]]
    x, y = sp[..., 0], sp[..., 1]
    area = 0.5 * np.abs(np.sum(x * y[:, _NEXT24] - x[:, _NEXT24] * y, axis=1))
    return np.where(count >= 3, area, 0.0)


def iou_pairs(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise IoU of canonical quads ``a[i]`` and ``b[i]``, arrays of shape (P, 4, 2)."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4, 2)
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4, 2)
    if len(a) != len(b):
        raise ValueError("iou_pairs needs equal-length inputs")
    out = np.empty(len(a))
    for lo in range(0, len(a), _CHUNK):
        out[lo : lo + _CHUNK] = _iou_chunk(a[lo : lo + _CHUNK], b[lo : lo + _CHUNK])
    return out


def _iou_chunk(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if len(a) == 0:
        return np.zeros(0)
    swap = _lex_greater(a, b)
    a, b = np.where(swap[:, None, None], b, a), np.where(swap[:, None, None], a, b)
    area_a = np.abs(signed_areas(a))
    area_b = np.abs(signed_areas(b))
    inter = _intersection_area(a, b)
    same = np.all((a == b).reshape(len(a), -1), axis=1)
    union = area_a + area_b - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.clip(inter / union, 0.0, 1.0)
    val = np.where(inter < INTER_EPS, 0.0, val)
    val = np.where(same, 1.0, val)
    return np.where((area_a < AREA_EPS) | (area_b < AREA_EPS), 0.0, val)


def iou_matrix(a: np.ndarray, b: Optional[np.ndarray] = None) -> np.ndarray:
    """Pairwise IoU between quads ``a`` (n,4,2) and ``b`` (m,4,2); symmetric fast path when b is None."""
    a = np.asarray(a, dtype=np.float64).reshape(-1, 4, 2)
    if b is None:
        n = len(a)
        out = np.eye(n)
        iu, ju = np.triu_indices(n, k=1)
        vals = iou_pairs(a[iu], a[ju])
        out[iu, ju] = vals
        out[ju, iu] = vals
        degenerate = np.abs(signed_areas(a)) < AREA_EPS
        out[degenerate, degenerate] = 0.0
        return out
    b = np.asarray(b, dtype=np.float64).reshape(-1, 4, 2)
    n, m = len(a), len(b)
    ii, jj = np.divmod(np.arange(n * m), m) if n * m else (np.zeros(0, int), np.zeros(0, int))
    return iou_pairs(a[ii], b[jj]).reshape(n, m)


def iou_one_to_many(q: np.ndarray, others: np.ndarray) -> np.ndarray:
    others = np.asarray(others, dtype=np.float64).reshape(-1, 4, 2)
    rep = np.broadcast_to(np.asarray(q, dtype=np.float64).reshape(1, 4, 2), others.shape)
    return iou_pairs(rep, others)


def aabb(quads: np.ndarray) -> np.ndarray:
    """(n, 4) array of x_min, y_min, x_max, y_max."""
    q = np.asarray(quads, dtype=np.float64).reshape(-1, 4, 2)
    return np.concatenate([q.min(axis=1), q.max(axis=1)], axis=1)


def aabb_overlaps(box: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    return (
        (boxes[:, 0] < box[2]) & (boxes[:, 2] > box[0]) & (boxes[:, 1] < box[3]) & (boxes[:, 3] > box[1])
    )


def aabb_iou_one_to_many(box: np.ndarray, boxes: np.ndarray) -> np.ndarray:
    iw = np.clip(np.minimum(box[2], boxes[:, 2]) - np.maximum(box[0], boxes[:, 0]), 0.0, None)
    ih = np.clip(np.minimum(box[3], boxes[:, 3]) - np.maximum(box[1], boxes[:, 1]), 0.0, None)
    inter = iw * ih
    area = (box[2] - box[0]) * (box[3] - box[1])
    areas = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    union = area + areas - inter
    with np.errstate(divide="ignore", invalid="ignore"):
        val = np.where(inter < INTER_EPS, 0.0, inter / union)
    return np.where((area < AREA_EPS) | (areas < AREA_EPS), 0.0, np.clip(val, 0.0, 1.0))


def min_area_rect(quads: np.ndarray) -> np.ndarray:
    """Minimum-area enclosing rotated rectangle of each convex quad (rotating calipers over hull edges)."""
    q = np.asarray(quads, dtype=np.float64).reshape(-1, 4, 2)
    edges = q[:, _NEXT4] - q
    norm = np.linalg.norm(edges, axis=2)
    safe = np.where(norm > 0, norm, 1.0)
    ux = (edges / safe[..., None])  # (n,4,2) candidate axis per edge
    ux = np.where(norm[..., None] > 0, ux, np.array([1.0, 0.0]))
    vx = np.stack([-ux[..., 1], ux[..., 0]], axis=-1)
    pu = np.einsum("nkd,njd->nkj", ux, q)  # projections of all 4 points per axis
    pv = np.einsum("nkd,njd->nkj", vx, q)
    areas = (pu.max(2) - pu.min(2)) * (pv.max(2) - pv.min(2))
    best = np.argmin(areas, axis=1)
    rows = np.arange(len(q))
    u, v = ux[rows, best], vx[rows, best]
    u0, u1 = pu[rows, best].min(1), pu[rows, best].max(1)
    v0, v1 = pv[rows, best].min(1), pv[rows, best].max(1)
    corners = np.stack(
        [
            u * u0[:, None] + v * v0[:, None],
            u * u1[:, None] + v * v0[:, None],
            u * u1[:, None] + v * v1[:, None],
            u * u0[:, None] + v * v1[:, None],
        ],
        axis=1,
    )
    return canonicalize_array(corners)
