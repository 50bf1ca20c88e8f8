import numpy as np
import pytest

from boxfuse.evaluation import (
    BenchResult,
    EvalReport,
    bench,
    default_thresholds,
    f_measure_svg,
    make_runner,
    match_detections,
    prf,
    reports_csv,
    runner_names,
    sweep,
)
from boxfuse.fusion import FusionModel
from boxfuse.geometry import ImageMeta, iou_matrix, quads_array
from boxfuse.nms import skew_nms
from conftest import random_box, square
from oracles import exhaustive_tp

META = ImageMeta(100, 100)


def test_default_thresholds():
    assert default_thresholds() == [0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8]


def test_perfect_detection():
    gts = [square(0, 0, 5), square(20, 20, 5)]
    assert match_detections(gts, gts, 0.5) == (2, 0, 0)


def test_one_of_two_found():
    gts = [square(0, 0, 10), square(50, 50, 10)]
    pred = [square(0.5, 0, 10, score=0.9)]
    assert match_detections(pred, gts, 0.5) == (1, 0, 1)
    assert prf(1, 0, 1)[1] == 0.5


def test_one_to_one_rule():
    gt = [square(0, 0, 10)]
    preds = [square(0.5, 0, 10, score=0.9), square(0, 0.5, 10, score=0.8)]
    counts = match_detections(preds, gt, 0.5)
    assert counts == (1, 1, 0)
    assert counts[0] == exhaustive_tp(iou_matrix(quads_array(preds), quads_array(gt)), 0.5)


def test_threshold_validation():
    with pytest.raises(ValueError):
        match_detections([square()], [square()], 1.0)


def test_prf_zero_predictions():
    assert prf(0, 0, 3) == (0.0, 0.0, 0.0)
    assert prf(0, 0, 0) == (0.0, 0.0, 0.0)


def test_sweep_examples():
    gts = [square(0, 0, 1), square(5, 5, 1)]
    rep = sweep(gts, gts)
    assert all(r.f_measure == 1.0 for r in rep.records)
    # every prediction overlaps its GT at IoU exactly 0.6
    preds = [square(0.25, 0, 1, 0.9), square(5.25, 5, 1, 0.8)]
    rep = sweep(preds, gts)
    assert rep.f_at(0.5) > 0
    assert all(rep.f_at(t) == 0 for t in (0.65, 0.7, 0.75, 0.8))
    empty = sweep([[]], [gts])
    assert all((r.precision, r.recall, r.f_measure) == (0, 0, 0) for r in empty.records)


def test_sweep_rejects_unsorted():
    with pytest.raises(ValueError):
        sweep([square()], [square()], [0.6, 0.5])
    with pytest.raises(ValueError):
        sweep([[square()]], [[square()], [square()]])


def test_greedy_is_bounded_by_exhaustive(rng):
    for _ in range(60):
        gts = [random_box(rng, span=20, size=(3, 8)) for _ in range(int(rng.integers(1, 5)))]
        preds = [random_box(rng, span=20, size=(3, 8)) for _ in range(int(rng.integers(1, 5)))]
        ov = iou_matrix(quads_array(preds), quads_array(gts))
        t = 0.2
        tp, fp, fn = match_detections(preds, gts, t)
        assert tp <= exhaustive_tp(ov, t)
        assert tp + fp == len(preds) and tp + fn == len(gts)


def test_sweep_invariants(rng):
    for _ in range(20):
        gts = [[random_box(rng, span=30, size=(4, 10)) for _ in range(4)] for _ in range(3)]
        preds = [[random_box(rng, span=30, size=(4, 10)) for _ in range(5)] for _ in range(3)]
        rep = sweep(preds, gts, [0.05, 0.1, 0.2, 0.3, 0.5])
        fs = [r.f_measure for r in rep.records]
        assert fs == sorted(fs, reverse=True)
        for r in rep.records:
            assert 0 <= r.precision <= 1 and 0 <= r.recall <= 1
            assert r.true_positives + r.false_negatives == 12
            assert r.true_positives + r.false_positives == 15
            p, rc, f = prf(r.true_positives, r.false_positives, r.false_negatives)
            assert (p, rc, f) == (r.precision, r.recall, r.f_measure)


def test_report_outputs():
    gts = [square(0, 0, 1)]
    rep = sweep(gts, gts, algorithm="x")
    csv = rep.to_csv().splitlines()
    assert csv[0].startswith("algorithm,iou_threshold") and len(csv) == 8
    assert '"algorithm": "x"' in rep.to_json()
    both = reports_csv([rep, sweep(gts, gts, algorithm="y")]).splitlines()
    assert len(both) == 15
    svg = f_measure_svg([rep])
    assert svg.startswith("<svg") and "polyline" in svg


def test_bench_bookkeeping():
    boxes = [square(i, 0, 2, 0.1 * (i + 1)) for i in range(10)]
    res = bench("polygon", [(boxes, META)], repetitions=3)
    assert len(res.samples_ms[0]) == 3
    assert res.median_ms == pytest.approx(np.median(res.samples_ms[0]))
    rows = res.to_rows()
    assert rows[0]["repetitions"] == 3


def test_bench_errors():
    with pytest.raises(KeyError, match="valid names"):
        bench("nope", [([square()], META)])
    with pytest.raises(ValueError):
        bench("polygon", [([square()], META)], repetitions=2)
    with pytest.raises(ValueError):
        make_runner("gfnet")
    assert "gfnet" in runner_names() and "skew" in runner_names()


def test_bench_gfnet_runner():
    res = bench("gfnet", [([square(10, 10, 5)], META)], repetitions=3, model=FusionModel.mean_fusion(4))
    assert len(res.samples_ms) == 1


def test_skew_deterministic(rng):
    boxes = [random_box(rng, span=50) for _ in range(200)]
    assert skew_nms(boxes, 0.5) == skew_nms(boxes, 0.5)


def test_median_invariant_to_shuffle(rng):
    s = list(rng.uniform(1, 5, 9))
    a = BenchResult("x", [s])
    b = BenchResult("x", [list(rng.permutation(s))])
    assert a.medians == b.medians and a.iqrs == b.iqrs


def test_eval_report_lookup():
    rep = EvalReport("x")
    with pytest.raises(KeyError):
        rep.f_at(0.5)
