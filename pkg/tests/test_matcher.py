import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import straight_traverse
from vpr_integrity.core import Pose2D, ToleranceConfig, Traverse
from vpr_integrity.errors import DimensionError
from vpr_integrity.matcher import (
    DistanceMetric,
    best_match,
    distance_matrix,
    distance_vector,
    label_match,
    match_queries,
)


def test_self_distance_is_zero():
    rng = np.random.default_rng(0)
    t = Traverse(np.zeros((5, 3)), rng.normal(size=(5, 6)))
    d = distance_vector(t.features[3], t)
    assert d[3] == 0.0
    assert np.all(np.delete(d, 3) > 0)


def test_orthonormal_cosine_distance_is_one():
    t = Traverse(np.zeros((2, 3)), np.eye(2))
    assert np.allclose(distance_vector([1.0, 0.0], t, DistanceMetric.COSINE), [0.0, 1.0])


@pytest.mark.parametrize("metric", ["euclidean", "cosine"])
def test_matches_scalar_loop_oracle(metric):
    rng = np.random.default_rng(1)
    refs = rng.normal(size=(10, 8))
    q = rng.normal(size=8)
    t = Traverse(np.zeros((10, 3)), refs)
    d = distance_vector(q, t, metric)
    R = t.features.astype(np.float64)
    for i in range(10):
        if metric == "euclidean":
            want = math.sqrt(sum((q[j] - R[i, j]) ** 2 for j in range(8)))
        else:
            dot = sum(q[j] * R[i, j] for j in range(8))
            want = 1 - dot / (math.sqrt(sum(x * x for x in q)) * math.sqrt(sum(x * x for x in R[i])))
        assert abs(d[i] - want) <= 1e-12


def test_dimension_mismatch():
    t = Traverse(np.zeros((3, 3)), np.ones((3, 4)))
    with pytest.raises(DimensionError):
        distance_vector(np.ones(5), t)


def test_best_match_examples():
    assert best_match([3, 1, 2]) == 1      # 0-based; the second reference
    assert best_match([1, 1, 2]) == 0      # first occurrence on ties
    with pytest.raises(DimensionError):
        best_match([])


def test_best_match_scan_oracle():
    rng = np.random.default_rng(2)
    for _ in range(1000):
        v = rng.integers(0, 5, size=rng.integers(1, 12)).astype(float)
        idx = 0
        for i in range(len(v)):
            if v[i] < v[idx]:
                idx = i
        assert best_match(v) == idx


@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(-1e6, 1e6)), st.randoms())
def test_best_match_is_permutation_consistent(v, rnd):
    perm = list(range(len(v)))
    rnd.shuffle(perm)
    permuted = v[perm]
    # the chosen reference keeps the minimum value after the shuffle
    assert permuted[best_match(permuted)] == v[best_match(v)]


def test_distance_zero_iff_equal_feature():
    rng = np.random.default_rng(3)
    t = Traverse(np.zeros((6, 3)), rng.normal(size=(6, 5)))
    other = rng.normal(size=5)
    assert np.all(distance_vector(other, t) > 0)
    assert np.count_nonzero(distance_vector(t.features[2], t) == 0) == 1


def test_label_identity():
    t = straight_traverse(10)
    assert label_match(t.pose(4), t.pose(4), t, ToleranceConfig(0.5)) == (0.0, 1)


def test_label_three_references_past_truth():
    t = straight_traverse(10, spacing=1.0)
    assert label_match(t.pose(6), t.pose(3), t, ToleranceConfig(0.5)) == (3.0, 0)


def test_label_boundary_is_inclusive():
    t = straight_traverse(10, spacing=1.0)
    assert label_match(t.pose(5), t.pose(3), t, ToleranceConfig(2.0)) == (2.0, 1)
    assert label_match(Pose2D(0.0, 0.5), Pose2D(0.0, 0.0), t, ToleranceConfig(0.5, "euclidean")) == (0.5, 1)


def test_along_track_differs_from_euclidean_on_a_curve():
    poses = [[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0]]
    t = Traverse(poses, np.eye(4))
    a = label_match(t.pose(3), t.pose(0), t, ToleranceConfig(0.5))[0]
    e = label_match(t.pose(3), t.pose(0), t, ToleranceConfig(0.5, "euclidean"))[0]
    assert (a, e) == (3.0, 1.0)


@given(st.floats(0.01, 5.0), st.floats(0.01, 5.0), st.integers(0, 9), st.integers(0, 9))
def test_label_monotone_in_tolerance(t1, t2, i, j):
    t = straight_traverse(10, spacing=0.7)
    lo, hi = sorted((t1, t2))
    if label_match(t.pose(i), t.pose(j), t, ToleranceConfig(lo))[1] == 1:
        assert label_match(t.pose(i), t.pose(j), t, ToleranceConfig(hi))[1] == 1


def test_match_queries_records(small_dataset):
    traverse, queries = small_dataset
    records = match_queries(traverse, queries)
    assert len(records) == len(queries)
    for r in records[:20]:
        assert r.best_index == int(np.argmin(r.distance_vector))
        assert r.label == int(r.gt_error <= 0.5)
        assert r.match_distance == r.distance_vector.min()
