"""Synthetic dense detections around long, thin, rotated ground-truth boxes.

Each ground-truth rectangle spawns a set of degraded copies: shortened along
the long axis (partial coverage), shifted, rotated and with jittered
vertices. Confidence tracks the copy's IoU with its source plus noise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .geometry import ImageMeta, QuadBox, iou, iou_one_to_many

_MAX_PLACEMENT_TRIES = 200


@dataclass(frozen=True)
class PerturbSpec:
    boxes_per_instance: tuple[int, int] = (20, 40)
    center_jitter_frac: float = 0.02  # of the instance diagonal
    vertex_jitter_frac: float = 0.05  # of the side length, per axis of the box frame
    shrink_range: tuple[float, float] = (0.4, 1.0)  # along the long axis
    rotation_jitter: float = 3.0  # degrees, uniform +-
    score_noise: float = 0.1
    score_min: float = 0.05
    aspect_range: tuple[float, float] = (3.0, 15.0)
    length_range: tuple[float, float] = (0.25, 0.6)  # long side, fraction of min(w, h)
    angle_range: float = 30.0  # ground-truth orientation, degrees +-
    max_gt_iou: float = 0.05
    crowded: bool = False
    seed: int = 0

    def __post_init__(self):
        for name in ("center_jitter_frac", "vertex_jitter_frac", "rotation_jitter", "score_noise"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("boxes_per_instance", "shrink_range", "aspect_range", "length_range"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} must be a non-empty range, got {(lo, hi)}")
        if self.boxes_per_instance[0] < 1:
            raise ValueError("boxes_per_instance must be at least 1")

    @property
    def gt_separation(self) -> float:
        # crowded scenes allow heavy overlap between neighbouring instances
        return 0.3 if self.crowded else self.max_gt_iou


ZERO_NOISE = dict(center_jitter_frac=0.0, vertex_jitter_frac=0.0, shrink_range=(1.0, 1.0), rotation_jitter=0.0, score_noise=0.0)


@dataclass
class Scene:
    meta: ImageMeta
    ground_truth: list[QuadBox]
    dense: list[QuadBox]
    sources: list[int] = field(default_factory=list)  # GT index per dense box, diagnostics only

    def __iter__(self):
        return iter((self.ground_truth, self.dense))


def _rect(cx, cy, length, width, theta) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    u = np.array([c, s]) * length / 2.0
    v = np.array([-s, c]) * width / 2.0
    ctr = np.array([cx, cy])
    return np.array([ctr - u - v, ctr + u - v, ctr + u + v, ctr - u + v])


def _place_instances(spec: PerturbSpec, num_instances: int, meta: ImageMeta, rng) -> list[tuple]:
    placed: list[tuple] = []
    quads: list[np.ndarray] = []
    base = min(meta.width, meta.height)
    for _ in range(num_instances):
        for _ in range(_MAX_PLACEMENT_TRIES):
            length = rng.uniform(*spec.length_range) * base
            aspect = rng.uniform(*spec.aspect_range)
            width = length / aspect
            theta = math.radians(rng.uniform(-spec.angle_range, spec.angle_range))
            # extent of the rotated rectangle decides the valid center range
            ex = abs(math.cos(theta)) * length / 2 + abs(math.sin(theta)) * width / 2
            ey = abs(math.sin(theta)) * length / 2 + abs(math.cos(theta)) * width / 2
            if 2 * ex >= meta.width or 2 * ey >= meta.height:
                continue
            cx = rng.uniform(ex, meta.width - ex)
            cy = rng.uniform(ey, meta.height - ey)
            q = _rect(cx, cy, length, width, theta)
            if quads and np.max(iou_one_to_many(q, np.array(quads))) >= spec.gt_separation:
                continue
            placed.append((cx, cy, length, width, theta))
            quads.append(QuadBox(tuple(map(tuple, q))).as_array())
            break
    return placed


def generate_scene(spec: PerturbSpec, num_instances: int, meta: ImageMeta, rng: Optional[np.random.Generator] = None) -> Scene:
    """One image worth of ground truth plus dense boxes; deterministic in ``spec.seed`` (or ``rng``)."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    if num_instances <= 0:
        return Scene(meta, [], [], [])
    instances = _place_instances(spec, num_instances, meta, rng)
    gts: list[QuadBox] = []
    dense: list[QuadBox] = []
    sources: list[int] = []
    lo_b, hi_b = spec.boxes_per_instance
    for k, (cx, cy, length, width, theta) in enumerate(instances):
        gt = QuadBox(tuple(map(tuple, _rect(cx, cy, length, width, theta))), 1.0)
        gts.append(gt)
        diag = math.hypot(length, width)
        for _ in range(int(rng.integers(lo_b, hi_b + 1))):
            shrink = rng.uniform(*spec.shrink_range)
            dx, dy = rng.uniform(-1.0, 1.0, size=2) * spec.center_jitter_frac * diag
            t = theta + math.radians(rng.uniform(-spec.rotation_jitter, spec.rotation_jitter))
            q = _rect(cx + dx, cy + dy, length * shrink, width, t)
            # vertex jitter in the box frame: along the long side and across it
            c, s = math.cos(t), math.sin(t)
            along = rng.uniform(-1.0, 1.0, size=4) * spec.vertex_jitter_frac * length * shrink
            across = rng.uniform(-1.0, 1.0, size=4) * spec.vertex_jitter_frac * width
            q = q + along[:, None] * np.array([c, s]) + across[:, None] * np.array([-s, c])
            q[:, 0] = np.clip(q[:, 0], 0.0, meta.width)
            q[:, 1] = np.clip(q[:, 1], 0.0, meta.height)
            box = QuadBox(tuple(map(tuple, q)), 1.0)
            noise = rng.normal(0.0, spec.score_noise) if spec.score_noise > 0 else 0.0
            score = min(1.0, max(spec.score_min, iou(box, gt) + noise))
            dense.append(box.with_score(score))
            sources.append(k)
    return Scene(meta, gts, dense, sources)


def scene_seed(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, index]))


def generate_dataset(
    spec: PerturbSpec,
    num_scenes: int,
    meta: ImageMeta = ImageMeta(1000, 1000),
    instances: tuple[int, int] = (2, 5),
    seed: Optional[int] = None,
    prefix: str = "img",
) -> Iterator[Scene]:
    """Yield scenes with per-scene derived seeds, so any scene can be regenerated alone."""
    base = spec.seed if seed is None else seed
    for i in range(num_scenes):
        rng = scene_seed(base, i)
        k = int(rng.integers(instances[0], instances[1] + 1))
        m = ImageMeta(meta.width, meta.height, f"{prefix}{i:05d}")
        yield generate_scene(spec, k, m, rng)
