import io
import json
import os

import pytest

from boxfuse.geometry import QuadBox
from boxfuse.io import (
    DetectionRecord,
    ParseError,
    RunConfig,
    atomic_write,
    parse_detections,
    serialize_detections,
    serialize_record,
)
from conftest import random_box

LINE = '{"image_id": "a", "width": 640, "height": 480, "boxes": [{"quad": [1.000000, 2.000000, 11.000000, 2.000000, 11.000000, 7.500000, 1.000000, 7.500000], "score": 0.900000, "class_id": 3}]}\n'


def _parse(text):
    return parse_detections(io.StringIO(text))


def test_empty_file_gives_empty_list(tmp_path):
    assert _parse("") == []
    p = tmp_path / "e.jsonl"
    p.write_text("")
    assert parse_detections(p) == []
    assert _parse("\n  \n") == []


def test_valid_line_round_trips_bytes():
    recs = _parse(LINE)
    assert len(recs) == 1 and recs[0].width == 640
    b = recs[0].boxes[0]
    assert b.score == 0.9 and b.class_id == 3
    assert serialize_detections(recs) == LINE


def test_parse_serialize_fixed_point(rng):
    recs = []
    for i in range(5):
        boxes = [random_box(rng, span=400) for _ in range(3)]
        boxes = [QuadBox(b.vertices, b.score, None if i % 2 else i) for b in boxes]
        recs.append(DetectionRecord(f"im{i}", 500, 400.5, boxes))
    once = serialize_detections(recs)
    twice = serialize_detections(_parse(once))
    assert once == twice
    assert _parse(once)[1].width == 500 and _parse(once)[1].height == 400.5


def test_seven_element_quad_names_line_and_field():
    bad = LINE + LINE.replace("1.000000, 2.000000, ", "1.000000, ", 1)
    with pytest.raises(ParseError) as e:
        _parse(bad)
    assert e.value.line == 2
    msg = str(e.value)
    assert "line 2" in msg and "boxes[0].quad" in msg and "8" in msg


@pytest.mark.parametrize(
    "text,fragment",
    [
        ("{not json", "malformed JSON"),
        ('{"image_id": "a", "width": 1, "height": 1, "boxes": [{"quad": [NaN,0,1,0,1,1,0,1], "score": 1}]}', "malformed"),
        ('{"image_id": "a", "width": 1, "height": 1, "boxes": [{"quad": [1e999,0,1,0,1,1,0,1], "score": 1}]}', "finite"),
        ('{"image_id": "a", "width": 1, "height": 1}', "boxes"),
        ('{"image_id": "a", "width": 0, "height": 1, "boxes": []}', "positive"),
        ('{"image_id": "a", "width": 1, "height": 1, "boxes": [{"quad": [0,0,1,0,1,1,0,1], "score": -1}]}', "score"),
        ('{"image_id": "a", "width": 1, "height": 1, "boxes": [{"quad": [0,0,1,0,1,1,0,1], "score": "x"}]}', "score"),
        ('{"image_id": "a", "width": 1, "height": 1, "boxes": [{"quad": [0,0,1,0,1,1,0,1], "score": 1, "class_id": 1.5}]}', "class_id"),
        ("[1, 2]", "object"),
    ],
)
def test_parse_errors(text, fragment):
    with pytest.raises(ParseError, match=fragment) as e:
        _parse(text + "\n")
    assert e.value.line == 1


def test_missing_class_id_is_omitted():
    rec = DetectionRecord("x", 10, 10, [QuadBox.from_flat([0, 0, 1, 0, 1, 1, 0, 1], 1.0)])
    assert "class_id" not in serialize_record(rec)


def test_config_precedence():
    assert RunConfig.resolve().lr == 1e-4
    cfg = RunConfig.resolve({"lr": 0.01, "seed": 5}, {"lr": 0.02, "seed": None})
    assert cfg.lr == 0.02 and cfg.seed == 5
    assert RunConfig.resolve({"widths": [10, 32, 32, 10]}).widths == (10, 32, 32, 10)
    with pytest.raises(ValueError, match="unknown"):
        RunConfig.resolve({"bogus": 1})
    for bad in ({"cluster_threshold": 1.0}, {"node_count": 0}, {"loss_beta": 0}, {"loss_mode": "x"}, {"widths": [9, 2, 2, 10]}):
        with pytest.raises(ValueError):
            RunConfig.resolve(bad)


def test_config_json_is_stable():
    a = RunConfig.resolve({"seed": 3}).to_json()
    assert a == RunConfig.resolve(cli_values={"seed": 3}).to_json()
    assert json.loads(a)["seed"] == 3


def test_atomic_write_replaces_and_leaves_no_temp(tmp_path):
    p = tmp_path / "sub" / "f.txt"
    atomic_write(p, "one")
    atomic_write(p, "two")
    assert p.read_text() == "two"
    assert os.listdir(p.parent) == ["f.txt"]


def test_atomic_write_keeps_old_file_on_failure(tmp_path):
    p = tmp_path / "f.txt"
    atomic_write(p, "old")
    with pytest.raises(TypeError):
        atomic_write(p, 123)  # not writable as text
    assert p.read_text() == "old"
    assert os.listdir(tmp_path) == ["f.txt"]
