import itertools
from functools import reduce

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from boxfuse.clustering import (
    MergeError,
    cluster_partitioned,
    locality_aware_cluster,
    merge,
    partition,
    row_major_order,
)
from boxfuse.geometry import QuadBox
from boxfuse.synth import PerturbSpec, generate_scene
from boxfuse.geometry import ImageMeta
from conftest import random_box, rect, square
from oracles import reference_cluster


def test_merge_examples():
    m = merge(square(score=1), square(score=1))
    assert m.vertices == square().vertices and m.score == 2
    m = merge(rect(0, 0, 2, 1, 1.0), rect(1, 0, 3, 1, 1.0))
    assert m.vertices[0] == (0.5, 0.0)
    m = merge(rect(0, 0, 3, 1, 1.0), rect(3, 0, 6, 1, 2.0))
    assert m.vertices[0] == pytest.approx((2.0, 0.0)) and m.score == 3.0


def test_merge_zero_scores():
    with pytest.raises(MergeError):
        merge(square(score=0), square(score=0))


def test_cluster_examples():
    assert locality_aware_cluster([], 0.5) == []
    cs = locality_aware_cluster([square(score=0.5), square(score=0.7)], 0.5)
    assert len(cs) == 1 and cs[0].contributor_count == 2
    assert cs[0].representative.vertices == square().vertices
    cs = locality_aware_cluster([square(), square(5, 5)], 0.5)
    assert [c.contributor_count for c in cs] == [1, 1]


def test_chain_depends_on_running_merge():
    # IoU(A,B) = IoU(B,C) = 0.6 and IoU(A,C) = 1/3. With equal scores the merged
    # A+B sits at x0 = 0.125 and reaches C at IoU 0.4545; weighting B by 3 moves
    # it to x0 = 0.1875 and IoU 0.5238, so C joins.
    a, b, c = square(0, 0, score=1.0), square(0.25, 0, score=1.0), square(0.5, 0, score=1.0)
    cs = locality_aware_cluster([c, b, a], 0.5)
    assert [len(x.members) for x in cs] == [2, 1]
    assert cs[0].members == [a, b]
    assert cs[0].representative.vertices[0] == pytest.approx((0.125, 0.0))

    b3 = b.with_score(3.0)
    cs = locality_aware_cluster([a, b3, c], 0.5)
    assert len(cs) == 1 and cs[0].members == [a, b3, c]
    ref = reference_cluster([(x.as_array(), x.score) for x in (a, b3, c)], 0.5)
    assert ref == [[0, 1, 2]]
    ref = reference_cluster([(x.as_array(), x.score) for x in (a, b, c)], 0.5)
    assert ref == [[0, 1], [2]]


def test_threshold_validation():
    with pytest.raises(ValueError):
        locality_aware_cluster([square()], 0.0)
    with pytest.raises(ValueError):
        locality_aware_cluster([square()], 1.0)


def test_row_major_order():
    boxes = [square(5, 0), square(0, 3), square(0, 0)]
    assert row_major_order(boxes) == [2, 0, 1]


def test_representative_score_is_member_sum(rng):
    boxes = [random_box(rng, span=30) for _ in range(120)]
    for c in locality_aware_cluster(boxes, 0.3):
        assert c.representative.score == pytest.approx(sum(m.score for m in c.members), rel=1e-12)
        assert c.contributor_count == len(c.members)


def test_matches_reference_trace(rng):
    # the pruned, vectorized scan must reproduce a plain transcription of the algorithm
    for trial in range(25):
        spec = PerturbSpec(seed=trial, boxes_per_instance=(3, 12))
        scene = generate_scene(spec, int(rng.integers(1, 4)), ImageMeta(300, 300))
        boxes = [b.with_score(round(b.score, 3)) for b in scene.dense]
        th = float(rng.choice([0.3, 0.5, 0.7]))
        ordered = [boxes[i] for i in row_major_order(boxes)]
        ref = reference_cluster([(b.as_array(), b.score) for b in ordered], th)
        got = locality_aware_cluster(boxes, th)
        assert [[ordered.index(m) for m in c.members] for c in got] == ref


def test_partition_property(rng):
    for _ in range(30):
        boxes = [random_box(rng, span=50) for _ in range(int(rng.integers(1, 60)))]
        cs = locality_aware_cluster(boxes, float(rng.uniform(0.1, 0.9)))
        members = [m for c in cs for m in c.members]
        assert sorted(members, key=id) == sorted(boxes, key=id)


def test_deterministic_under_input_shuffle(rng):
    boxes = [random_box(rng, span=40) for _ in range(80)]
    a = locality_aware_cluster(boxes, 0.4)
    perm = rng.permutation(len(boxes))
    b = locality_aware_cluster([boxes[i] for i in perm], 0.4)
    assert [c.representative for c in a] == [c.representative for c in b]


def test_partitioned_by_class():
    boxes = [square(score=0.5, class_id=2), square(score=0.5, class_id=1), square(score=0.5)]
    cs = cluster_partitioned(boxes, 0.5, "im")
    assert [c.class_id for c in cs] == [None, 1, 2]
    assert all(c.image_id == "im" for c in cs)
    assert [c.cluster_id for c in cs] == [0, 1, 2]
    assert list(partition(boxes)) == [None, 1, 2]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 5), st.floats(0, 5), st.floats(0.1, 3)), min_size=1, max_size=6), st.randoms())
def test_merge_fold_permutation_invariant(items, rnd):
    boxes = [square(x, y, 2.0, score=s) for x, y, s in items]
    ref = reduce(lambda p, g: merge(g, p), boxes)
    order = list(range(len(boxes)))
    rnd.shuffle(order)
    alt = reduce(lambda p, g: merge(g, p), [boxes[i] for i in order])
    assert np.allclose(alt.as_array(), ref.as_array(), atol=1e-9, rtol=0)
    assert alt.score == pytest.approx(ref.score, abs=1e-9)


def test_fold_all_permutations_small():
    boxes = [rect(0, 0, 4, 1, 0.2), rect(1, 0.5, 5, 1.5, 0.9), rect(-1, 0, 3, 2, 0.4), rect(0.5, 0.1, 4.2, 1.3, 0.7)]
    results = [reduce(lambda p, g: merge(g, p), perm) for perm in itertools.permutations(boxes)]
    for r in results:
        assert np.allclose(r.as_array(), results[0].as_array(), atol=1e-12)
