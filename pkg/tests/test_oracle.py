import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cubetop import oracle

INF = float("inf")
RING = np.array([[0, 0, 0], [0, 9, 0], [0, 0, 0]])


def test_single_pixel():
    pd = oracle.reduce(np.array([[4]]))
    assert pd.as_tuples(0) == [(4.0, INF)]
    assert pd.as_tuples(1) == []


def test_row_example():
    assert oracle.reduce(np.array([[3, 1, 2, 0]])).as_tuples(0) == [(0.0, INF), (1.0, 2.0)]


def test_ring():
    assert oracle.reduce(RING).as_tuples(1) == [(0.0, 9.0)]


def test_guard_rail():
    with pytest.raises(ValueError):
        oracle.reduce(np.zeros((33, 2)))


def test_boundary_of_boundary_vanishes():
    cx = oracle.CubeComplex(np.zeros((2, 3)))
    for cell, dim in zip(cx.cells, cx.dims):
        if dim == 2:
            counts = {}
            for face in cx.faces(cell):
                for ff in cx.faces(face):
                    counts[ff] = counts.get(ff, 0) + 1
            assert all(c % 2 == 0 for c in counts.values())


def test_values_are_min_over_pixels():
    cx = oracle.CubeComplex(np.array([[3, 1], [2, 5]]))
    value = dict(zip(cx.cells, cx.values))
    assert value[(2, 2)] == 1  # center vertex
    assert value[(1, 2)] == 1  # edge between the top pixels
    assert value[(3, 3)] == 5  # bottom-right pixel


class TestBetti:
    def test_everything_dark(self):
        assert oracle.betti_at(np.arange(6).reshape(2, 3), 10) == (1, 0)

    def test_diagonal(self):
        assert oracle.betti_at(np.array([[0, 5], [5, 0]]), 0) == (1, 0)

    def test_ring(self):
        assert oracle.betti_at(RING, 0) == (1, 1)

    def test_nothing_dark(self):
        assert oracle.betti_at(np.full((2, 2), 3), 1) == (0, 0)


@settings(max_examples=100, deadline=None)
@given(arrays(np.int64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.integers(0, 5)))
def test_betti_matches_reduction(frame):
    pd = oracle.reduce(frame)
    for t in range(6):
        assert oracle.betti_at(frame, t) == (pd.betti(t, 0), pd.betti(t, 1))
