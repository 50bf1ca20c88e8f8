import math
import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from boxfuse.geometry import QuadBox  # noqa: E402


def square(x=0.0, y=0.0, s=1.0, score=1.0, class_id=None):
    return QuadBox(((x, y), (x + s, y), (x + s, y + s), (x, y + s)), score, class_id)


def rect(x0, y0, x1, y1, score=1.0, class_id=None):
    return QuadBox(((x0, y0), (x1, y0), (x1, y1), (x0, y1)), score, class_id)


def rotated_rect(cx, cy, w, h, deg, score=1.0):
    t = math.radians(deg)
    c, s = math.cos(t), math.sin(t)
    pts = [(cx + c * dx - s * dy, cy + s * dx + c * dy) for dx, dy in ((-w / 2, -h / 2), (w / 2, -h / 2), (w / 2, h / 2), (-w / 2, h / 2))]
    return QuadBox(tuple(pts), score)


def random_box(rng, span=100.0, size=(2.0, 30.0), score=None):
    cx, cy = rng.uniform(0, span, 2)
    w, h = rng.uniform(*size, 2)
    return rotated_rect(cx, cy, w, h, rng.uniform(-90, 90), rng.uniform(0.05, 1.0) if score is None else score)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, echoed after the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
