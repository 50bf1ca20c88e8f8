"""JSON-lines detection files, run configuration and atomic output writes."""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import IO, Iterable, Optional, Sequence

from .clustering import Cluster, DEFAULT_CLUSTER_THRESHOLD
from .fusion import DEFAULT_WIDTHS, LOSS_BETA
from .geometry import ImageMeta, QuadBox
from .graph import ADJ_THRESHOLD, NODES_TEXT


class ParseError(ValueError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass
class DetectionRecord:
    image_id: str
    width: float
    height: float
    boxes: list[QuadBox] = field(default_factory=list)

    @property
    def meta(self) -> ImageMeta:
        return ImageMeta(self.width, self.height, self.image_id)


def _num(v) -> str:
    return f"{float(v):.6f}"


def _dim(v) -> str:
    return str(int(v)) if float(v).is_integer() else _num(v)


def _box_json(b: QuadBox) -> str:
    parts = [f'"quad": [{", ".join(_num(c) for c in b.flat())}]', f'"score": {_num(b.score)}']
    if b.class_id is not None:
        parts.append(f'"class_id": {int(b.class_id)}')
    return "{" + ", ".join(parts) + "}"


def serialize_record(rec: DetectionRecord) -> str:
    """One canonical JSON line (no trailing newline); floats carry 6 decimals."""
    boxes = ", ".join(_box_json(b) for b in rec.boxes)
    return f'{{"image_id": {json.dumps(rec.image_id)}, "width": {_dim(rec.width)}, "height": {_dim(rec.height)}, "boxes": [{boxes}]}}'


def serialize_detections(records: Iterable[DetectionRecord]) -> str:
    return "".join(serialize_record(r) + "\n" for r in records)


def _finite(v, line: int, what: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(line, f"{what} must be a number, got {v!r}")
    if not math.isfinite(v):
        raise ParseError(line, f"{what} must be finite")
    return float(v)


def _reject_constant(name):
    # json accepts NaN/Infinity literals by default
    raise ValueError(f"non-finite literal {name}")


def _parse_line(text: str, line: int) -> DetectionRecord:
    try:
        obj = json.loads(text, parse_constant=_reject_constant)
    except ValueError as e:
        raise ParseError(line, f"malformed JSON ({e})") from None
    if not isinstance(obj, dict):
        raise ParseError(line, "record must be a JSON object")
    for key in ("image_id", "width", "height", "boxes"):
        if key not in obj:
            raise ParseError(line, f"missing field {key!r}")
    if not isinstance(obj["image_id"], str):
        raise ParseError(line, "image_id must be a string")
    w = _finite(obj["width"], line, "width")
    h = _finite(obj["height"], line, "height")
    if w <= 0 or h <= 0:
        raise ParseError(line, "width and height must be positive")
    if not isinstance(obj["boxes"], list):
        raise ParseError(line, "boxes must be a list")
    boxes = []
    for k, b in enumerate(obj["boxes"]):
        where = f"boxes[{k}]"
        if not isinstance(b, dict) or "quad" not in b or "score" not in b:
            raise ParseError(line, f"{where} needs 'quad' and 'score'")
        quad = b["quad"]
        if not isinstance(quad, list) or len(quad) != 8:
            n = len(quad) if isinstance(quad, list) else "non-list"
            raise ParseError(line, f"{where}.quad must have exactly 8 numbers, got {n}")
        coords = [_finite(c, line, f"{where}.quad") for c in quad]
        score = _finite(b["score"], line, f"{where}.score")
        if score < 0:
            raise ParseError(line, f"{where}.score must be >= 0")
        cls = b.get("class_id")
        if cls is not None and (isinstance(cls, bool) or not isinstance(cls, int)):
            raise ParseError(line, f"{where}.class_id must be an integer or null")
        boxes.append(QuadBox.from_flat(coords, score, cls))
    return DetectionRecord(obj["image_id"], w if not w.is_integer() else int(w), h if not h.is_integer() else int(h), boxes)


def parse_detections(stream: IO[str] | str | os.PathLike) -> list[DetectionRecord]:
    """Strictly parse JSONL detections; blank lines are skipped, errors carry the line number."""
    if isinstance(stream, (str, os.PathLike)):
        with open(stream, encoding="utf-8") as fh:
            return parse_detections(fh)
    out = []
    for n, text in enumerate(stream, start=1):
        if text.strip():
            out.append(_parse_line(text, n))
    return out


def records_from_images(images: Sequence[tuple[ImageMeta, Sequence[QuadBox]]]) -> list[DetectionRecord]:
    return [DetectionRecord(m.image_id, m.width, m.height, list(b)) for m, b in images]


def cluster_json(c: Cluster) -> str:
    head = json.dumps({"image_id": c.image_id, "cluster_id": c.cluster_id, "class_id": c.class_id, "contributor_count": c.contributor_count})
    members = ", ".join(_box_json(b) for b in c.members)
    return head[:-1] + f', "representative": {_box_json(c.representative)}, "members": [{members}]}}'


# ------------------------------------------------------------------ files


def atomic_write(path: str | os.PathLike, text: str) -> None:
    """Write via a temp file in the target directory, then rename over the target."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_detections(path, records: Iterable[DetectionRecord]) -> None:
    atomic_write(path, serialize_detections(records))


# ------------------------------------------------------------------ config


@dataclass
class RunConfig:
    cluster_threshold: float = DEFAULT_CLUSTER_THRESHOLD
    adj_threshold: float = ADJ_THRESHOLD
    node_count: int = NODES_TEXT
    loss_beta: float = LOSS_BETA
    loss_mode: str = "continuous"
    aggregation: str = "hadamard"
    lr: float = 1e-4
    lr_decay: float = 0.94
    lr_decay_every: int = 10_000
    steps: int = 10_000
    batch_size: int = 8
    seed: int = 0
    widths: tuple[int, ...] = DEFAULT_WIDTHS

    def validate(self) -> "RunConfig":
        for name in ("cluster_threshold", "adj_threshold"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1), got {v}")
        if self.node_count < 1:
            raise ValueError(f"node_count must be >= 1, got {self.node_count}")
        if not self.loss_beta > 0:
            raise ValueError(f"loss_beta must be positive, got {self.loss_beta}")
        if self.loss_mode not in ("continuous", "paper_literal"):
            raise ValueError(f"loss_mode must be 'continuous' or 'paper_literal', got {self.loss_mode!r}")
        if self.aggregation not in ("hadamard", "matmul"):
            raise ValueError(f"aggregation must be 'hadamard' or 'matmul', got {self.aggregation!r}")
        if not self.lr > 0 or not 0 < self.lr_decay <= 1 or self.lr_decay_every < 1:
            raise ValueError("learning rate, decay and decay interval must be positive")
        if self.steps < 0 or self.batch_size < 1:
            raise ValueError("steps must be >= 0 and batch_size >= 1")
        if len(self.widths) != 4 or self.widths[0] != 10 or self.widths[-1] != 10 or min(self.widths) < 1:
            raise ValueError(f"widths must look like 10,a,b,10, got {self.widths}")
        return self

    @classmethod
    def resolve(cls, file_values: Optional[dict] = None, cli_values: Optional[dict] = None) -> "RunConfig":
        """Defaults, overlaid by the config file, overlaid by explicit CLI flags."""
        known = {f.name for f in fields(cls)}
        merged: dict = {}
        for layer in (file_values or {}, cli_values or {}):
            unknown = set(layer) - known
            if unknown:
                raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
            merged.update({k: v for k, v in layer.items() if v is not None})
        if "widths" in merged:
            merged["widths"] = tuple(int(w) for w in merged["widths"])
        return cls(**merged).validate()

    def to_json(self) -> str:
        d = asdict(self)
        d["widths"] = list(self.widths)
        return json.dumps(d, indent=2, sort_keys=True) + "\n"


def load_config_file(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        d = json.load(fh)
    if not isinstance(d, dict):
        raise ValueError(f"config file {path} must hold a JSON object")
    return d
