import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from errors import DimensionMismatchError
from f2linalg import (
    INFEASIBLE, BitMatrix, BitVec, in_rowspace, kernel_basis, mat_vec_mul, rank,
    sample_rowspace, solve, syndrome_of_support,
)


@st.composite
def matrices(draw, max_rows=6, max_cols=10):
    n_rows = draw(st.integers(1, max_rows))
    n_cols = draw(st.integers(1, max_cols))
    rows = draw(st.lists(st.integers(0, (1 << n_cols) - 1), min_size=n_rows, max_size=n_rows))
    return BitMatrix(n_rows, n_cols, rows)


def test_bitvec_string_order():
    v = BitVec.from_string("1101")
    assert v.support() == [0, 1, 3]
    assert v[2] == 0 and v[3] == 1
    assert v.to_string() == "1101"
    assert v.weight() == 3


def test_bitvec_length_mismatch():
    with pytest.raises(DimensionMismatchError):
        BitVec.zeros(3) ^ BitVec.zeros(4)


def test_rank_solve_small():
    m = BitMatrix.from_rows(["110", "011", "101"])
    assert rank(m) == 2
    x = solve(m, BitVec.from_string("110"))
    assert x is not INFEASIBLE
    assert mat_vec_mul(m, x) == BitVec.from_string("110")
    assert solve(m, BitVec.from_string("100")) is INFEASIBLE
    assert not INFEASIBLE


def test_sample_rowspace_zero_matrix():
    with pytest.raises(ValueError):
        sample_rowspace(BitMatrix.zeros(2, 3), np.random.default_rng(0))


def test_sample_rowspace_stays_in_rowspace():
    m = BitMatrix.from_rows(["1100", "0110"])
    rng = np.random.default_rng(1)
    for _ in range(20):
        assert in_rowspace(m, sample_rowspace(m, rng))


def test_syndrome_of_support_matches_product():
    m = BitMatrix.from_rows(["1010", "0111"])
    v = BitVec.from_support(4, [1, 2])
    assert syndrome_of_support(m, v.support()) == mat_vec_mul(m, v)


@settings(max_examples=60, deadline=None)
@given(matrices())
def test_kernel_basis(m):
    basis = kernel_basis(m)
    assert len(basis) == m.n_cols - rank(m)
    for v in basis:
        assert mat_vec_mul(m, v).is_zero()
    if basis:
        assert rank(BitMatrix.from_rows(basis)) == len(basis)


@settings(max_examples=60, deadline=None)
@given(matrices(), st.data())
def test_solve_consistent_rhs(m, data):
    x = BitVec(m.n_cols, data.draw(st.integers(0, (1 << m.n_cols) - 1)))
    rhs = mat_vec_mul(m, x)
    y = solve(m, rhs)
    assert y is not INFEASIBLE
    assert mat_vec_mul(m, y) == rhs
