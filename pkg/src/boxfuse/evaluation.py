"""Precision/recall/F-measure over IoU thresholds, and wall-clock benchmarking."""

from __future__ import annotations

import csv
import io
import json
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import ImageMeta, QuadBox, iou_matrix, quads_array
from .nms import ALGORITHMS as NMS_ALGORITHMS, score_order


def default_thresholds(lo: float = 0.5, hi: float = 0.8, step: float = 0.05) -> list[float]:
    n = int(round((hi - lo) / step))
    return [round(lo + k * step, 10) for k in range(n + 1)]


def match_detections(preds: Sequence[QuadBox], gts: Sequence[QuadBox], iou_threshold: float = 0.5) -> tuple[int, int, int]:
    """Greedy one-to-one matching: predictions by descending score claim their best free GT."""
    if not 0.0 < iou_threshold < 1.0:
        raise ValueError(f"iou_threshold must lie in (0, 1), got {iou_threshold}")
    if not preds or not gts:
        return 0, len(preds), len(gts)
    ov = iou_matrix(quads_array(preds), quads_array(gts))
    return _greedy_counts(ov, score_order(preds), iou_threshold)


def _greedy_counts(ov: np.ndarray, order: Sequence[int], threshold: float) -> tuple[int, int, int]:
    claimed = np.zeros(ov.shape[1], dtype=bool)
    tp = 0
    for i in order:
        row = np.where(claimed, -1.0, ov[i])
        j = int(np.argmax(row))
        if row[j] >= threshold:
            claimed[j] = True
            tp += 1
    return tp, ov.shape[0] - tp, ov.shape[1] - tp


@dataclass
class ThresholdRecord:
    iou_threshold: float
    precision: float
    recall: float
    f_measure: float
    true_positives: int
    false_positives: int
    false_negatives: int


def prf(tp: int, fp: int, fn: int) -> tuple[float, float, float]:
    p = tp / (tp + fp) if tp + fp else 0.0
    r = tp / (tp + fn) if tp + fn else 0.0
    f = 2 * p * r / (p + r) if p + r > 0 else 0.0
    return p, r, f


@dataclass
class EvalReport:
    algorithm: str
    records: list[ThresholdRecord] = field(default_factory=list)
    timing_ms: list[float] = field(default_factory=list)

    def f_at(self, threshold: float) -> float:
        for r in self.records:
            if abs(r.iou_threshold - threshold) < 1e-9:
                return r.f_measure
        raise KeyError(f"threshold {threshold} not in report")

    def to_dict(self) -> dict:
        return {"algorithm": self.algorithm, "records": [asdict(r) for r in self.records], "timing_ms": self.timing_ms}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["algorithm", "iou_threshold", "precision", "recall", "f_measure", "tp", "fp", "fn"])
        for r in self.records:
            w.writerow(
                [
                    self.algorithm,
                    f"{r.iou_threshold:.2f}",
                    f"{r.precision:.6f}",
                    f"{r.recall:.6f}",
                    f"{r.f_measure:.6f}",
                    r.true_positives,
                    r.false_positives,
                    r.false_negatives,
                ]
            )
        return buf.getvalue()


def _as_images(x):
    # a flat list of boxes is one image
    if x and isinstance(x[0], QuadBox):
        return [x]
    return [list(im) for im in x]


def sweep(preds, gts, thresholds: Optional[Sequence[float]] = None, algorithm: str = "") -> EvalReport:
    """Evaluate at every threshold. ``preds``/``gts`` are per-image lists (or one flat list)."""
    thresholds = default_thresholds() if thresholds is None else list(thresholds)
    if any(b <= a for a, b in zip(thresholds, thresholds[1:])):
        raise ValueError("thresholds must be strictly increasing")
    p_imgs, g_imgs = _as_images(preds), _as_images(gts)
    if len(p_imgs) != len(g_imgs):
        raise ValueError(f"{len(p_imgs)} prediction images vs {len(g_imgs)} ground-truth images")
    totals = np.zeros((len(thresholds), 3), dtype=np.int64)
    for p, g in zip(p_imgs, g_imgs):
        if not p or not g:
            totals[:, 1] += len(p)
            totals[:, 2] += len(g)
            continue
        ov = iou_matrix(quads_array(p), quads_array(g))
        order = score_order(p)
        for k, t in enumerate(thresholds):
            totals[k] += _greedy_counts(ov, order, t)
    report = EvalReport(algorithm)
    for t, (tp, fp, fn) in zip(thresholds, totals):
        pr, rc, f = prf(int(tp), int(fp), int(fn))
        report.records.append(ThresholdRecord(float(t), pr, rc, f, int(tp), int(fp), int(fn)))
    return report


def reports_csv(reports: Sequence[EvalReport]) -> str:
    parts = [reports[0].to_csv()] + [r.to_csv().split("\n", 1)[1] for r in reports[1:]]
    return "".join(parts)


def f_measure_svg(reports: Sequence[EvalReport], width: int = 480, height: int = 320) -> str:
    """Line chart of F-measure against IoU threshold, one polyline per report."""
    colors = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf"]
    pad = 40
    ts = sorted({r.iou_threshold for rep in reports for r in rep.records})
    t0, t1 = (ts[0], ts[-1]) if ts else (0.0, 1.0)
    span = (t1 - t0) or 1.0

    def xy(t, f):
        return pad + (t - t0) / span * (width - 2 * pad), height - pad - f * (height - 2 * pad)

    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<line x1="{pad}" y1="{height - pad}" x2="{width - pad}" y2="{height - pad}" stroke="black"/>',
        f'<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{height - pad}" stroke="black"/>',
        f'<text x="{width / 2:.0f}" y="{height - 8}" font-size="12" text-anchor="middle">IoU threshold</text>',
        f'<text x="12" y="{height / 2:.0f}" font-size="12" transform="rotate(-90 12 {height / 2:.0f})" text-anchor="middle">F-measure</text>',
    ]
    for t in ts:
        x, _ = xy(t, 0)
        lines.append(f'<text x="{x:.1f}" y="{height - pad + 14}" font-size="10" text-anchor="middle">{t:.2f}</text>')
    for k, rep in enumerate(reports):
        c = colors[k % len(colors)]
        pts = " ".join("{:.1f},{:.1f}".format(*xy(r.iou_threshold, r.f_measure)) for r in rep.records)
        lines.append(f'<polyline fill="none" stroke="{c}" stroke-width="2" points="{pts}"/>')
        lines.append(f'<text x="{width - pad - 4}" y="{pad + 14 * (k + 1)}" font-size="11" fill="{c}" text-anchor="end">{rep.algorithm}</text>')
    lines.append("</svg>")
    return "\n".join(lines) + "\n"


# ------------------------------------------------------------------ timing


@dataclass
class BenchResult:
    algorithm: str
    samples_ms: list[list[float]]  # per input, one sample per repetition

    @staticmethod
    def _stats(samples: Sequence[float]) -> tuple[float, float, float]:
        q1, med, q3 = np.percentile(np.asarray(samples, dtype=np.float64), [25, 50, 75])
        return float(med), float(q1), float(q3)

    @property
    def medians(self) -> list[float]:
        return [self._stats(s)[0] for s in self.samples_ms]

    @property
    def iqrs(self) -> list[float]:
        return [self._stats(s)[2] - self._stats(s)[1] for s in self.samples_ms]

    @property
    def median_ms(self) -> float:
        """Median over all inputs of the per-input medians."""
        return float(np.median(self.medians)) if self.samples_ms else 0.0

    def to_rows(self) -> list[dict]:
        rows = []
        for k, s in enumerate(self.samples_ms):
            med, q1, q3 = self._stats(s)
            rows.append({"algorithm": self.algorithm, "input": k, "median_ms": med, "q1_ms": q1, "q3_ms": q3, "iqr_ms": q3 - q1, "repetitions": len(s)})
        return rows


Runner = Callable[[Sequence[QuadBox], ImageMeta], list]


def runner_names() -> list[str]:
    return sorted([*NMS_ALGORITHMS, "gfnet"])


def make_runner(name: str, model=None, **params) -> Runner:
    """A uniform ``(boxes, meta) -> boxes`` callable for a registered algorithm."""
    if name == "gfnet":
        if model is None:
            raise ValueError("the gfnet runner needs a trained model")
        from .fusion import fuse

        return lambda boxes, meta: fuse(model, boxes, meta, **params)
    if name not in NMS_ALGORITHMS:
        raise KeyError(f"unknown algorithm {name!r}; valid names: {', '.join(runner_names())}")
    fn = NMS_ALGORITHMS[name]
    return lambda boxes, meta: fn(boxes, **params)


def bench(
    algorithm: str | Runner,
    inputs: Sequence[tuple[Sequence[QuadBox], ImageMeta]],
    repetitions: int = 5,
    warmup: bool = True,
    model=None,
    **params,
) -> BenchResult:
    """Time the post-processing call only; the warm-up call is discarded."""
    if repetitions < 3:
        raise ValueError(f"repetitions must be >= 3, got {repetitions}")
    if callable(algorithm):
        run, name = algorithm, getattr(algorithm, "__name__", "custom")
    else:
        run, name = make_runner(algorithm, model=model, **params), algorithm
    samples = []
    for boxes, meta in inputs:
        if warmup:
            run(boxes, meta)
        cur = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            run(boxes, meta)
            cur.append((time.perf_counter() - t0) * 1000.0)
        samples.append(cur)
    return BenchResult(name, samples)
