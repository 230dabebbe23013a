import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mstm.core import (
    MultiVector,
    WeightVector,
    concat_norm_sq,
    concatenate,
    inner_product,
    joint_similarity,
    sme,
    topk_desc,
    topk_rows,
)
from mstm.errors import UsageError


def _unit(rng, d):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def test_weight_vector_validation():
    with pytest.raises(UsageError):
        WeightVector([])
    with pytest.raises(UsageError):
        WeightVector([0.5, -0.1])
    with pytest.raises(UsageError):
        WeightVector([0.0, 0.0])
    with pytest.raises(UsageError):
        WeightVector([np.nan, 1.0])
    with pytest.raises(UsageError):
        WeightVector.from_squared([0.5, -0.5])


def test_weight_vector_squared_roundtrip():
    w = WeightVector.from_squared([0.64, 0.36])
    np.testing.assert_allclose(w.omega, [0.8, 0.6])
    np.testing.assert_allclose(w.squared, [0.64, 0.36])
    assert w.m == len(w) == 2
    assert WeightVector.one_hot(3, 1).squared.tolist() == [0.0, 1.0, 0.0]
    np.testing.assert_allclose(w.masked_squared([True, False]), [0.64, 0.0])
    with pytest.raises(UsageError):
        w.masked_squared([True])


def test_weight_vector_is_immutable():
    w = WeightVector([1.0, 2.0])
    with pytest.raises(ValueError):
        w.omega[0] = 3.0


def test_multivector_needs_a_modality():
    with pytest.raises(UsageError):
        MultiVector((None, None))
    mv = MultiVector((np.ones(2), None))
    assert mv.mask.tolist() == [True, False]
    assert mv.m == 2


def test_inner_product_dimension_mismatch():
    with pytest.raises(UsageError):
        inner_product(np.ones(3), np.ones(4))
    assert inner_product([1, 2], [3, 4]) == 11.0


def test_joint_similarity_hand_value():
    # 0.64 * 0.5 + 0.36 * (-1) = -0.04
    a = MultiVector((np.array([1.0, 0.0]), np.array([0.0, 1.0])))
    b = MultiVector((np.array([0.5, math.sqrt(0.75)]), np.array([0.0, -1.0])))
    w = WeightVector.from_squared([0.64, 0.36])
    assert joint_similarity(a, b, w) == pytest.approx(-0.04, abs=1e-7)


def test_joint_similarity_skips_absent_slots():
    rng = np.random.default_rng(0)
    a0, a1, b0, b1 = (_unit(rng, 4) for _ in range(4))
    w = WeightVector.from_squared([0.3, 0.7])
    full = joint_similarity(MultiVector((a0, a1)), MultiVector((b0, b1)), w)
    part = joint_similarity(MultiVector((a0, None)), MultiVector((b0, b1)), w)
    assert part == pytest.approx(0.3 * float(np.dot(a0.astype(np.float32), b0.astype(np.float32))))
    assert full != part


def test_joint_similarity_schema_mismatch():
    a = MultiVector((np.ones(2),))
    with pytest.raises(UsageError):
        joint_similarity(a, MultiVector((np.ones(2), np.ones(2))), WeightVector([1.0]))


@settings(max_examples=60, deadline=None)
@given(
    m=st.integers(1, 4),
    seed=st.integers(0, 2**31 - 1),
    dims=st.lists(st.integers(1, 64), min_size=4, max_size=4),
)
def test_joint_similarity_equals_concatenated_ip(m, seed, dims):
    rng = np.random.default_rng(seed)
    a = [_unit(rng, d) for d in dims[:m]]
    b = [_unit(rng, d) for d in dims[:m]]
    w = WeightVector(rng.random(m) + 0.01)
    lhs = joint_similarity(MultiVector(tuple(a)), MultiVector(tuple(b)), w)
    rhs = float(np.dot(concatenate([x.astype(np.float32) for x in a], w),
                       concatenate([x.astype(np.float32) for x in b], w)))
    assert lhs == pytest.approx(rhs, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(m=st.integers(1, 4), seed=st.integers(0, 2**31 - 1))
def test_ip_distance_identity(m, seed):
    # with unit modality vectors IP = C - |a - b|^2 / 2
    rng = np.random.default_rng(seed)
    dims = rng.integers(2, 16, size=m)
    w = WeightVector(rng.random(m) + 0.01)
    a = concatenate([_unit(rng, d) for d in dims], w)
    b = concatenate([_unit(rng, d) for d in dims], w)
    c = concat_norm_sq(w)
    assert float(a @ b) == pytest.approx(c - 0.5 * float(np.sum((a - b) ** 2)), abs=1e-12)
    assert float(a @ a) == pytest.approx(c, abs=1e-12)


def test_concat_norm_sq_with_mask():
    w = WeightVector.from_squared([0.64, 0.36])
    assert concat_norm_sq(w) == pytest.approx(1.0)
    assert concat_norm_sq(w, [True, False]) == pytest.approx(0.64)


def test_sme():
    v = np.array([1.0, 0.0])
    assert sme(v, v) == 0.0
    assert sme(v, np.array([0.9, math.sqrt(0.19)])) == pytest.approx(0.1)


def test_concatenate_layout():
    w = WeightVector([2.0, 0.5])
    out = concatenate([np.array([1.0, 0.0]), np.array([0.0, 0.0, 1.0])], w)
    assert out.tolist() == [2.0, 0.0, 0.0, 0.0, 0.5]
    with pytest.raises(UsageError):
        concatenate([np.ones(2)], w)


def test_topk_desc_ties_go_to_lower_index():
    s = np.array([0.5, 0.9, 0.5, 0.9, 0.1])
    assert topk_desc(s, 3).tolist() == [1, 3, 0]
    assert topk_desc(s, 10).tolist() == [1, 3, 0, 2, 4]
    assert topk_desc(s, 0).size == 0


@settings(max_examples=60, deadline=None)
@given(rows=st.integers(1, 6), n=st.integers(1, 30), k=st.integers(1, 35), seed=st.integers(0, 10**6))
def test_topk_rows_matches_rowwise(rows, n, k, seed):
    rng = np.random.default_rng(seed)
    s = rng.integers(0, 5, size=(rows, n)).astype(np.float64)  # many ties
    got = topk_rows(s, k)
    for r in range(rows):
        assert got[r].tolist() == topk_desc(s[r], k).tolist()
