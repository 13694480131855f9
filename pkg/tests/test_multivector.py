import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from kawaguchi.multivector import (PluckerVector, all_indices, check_index, cofactors, det,
                                   jacobian_multivector, plucker_coordinates, plucker_residual,
                                   sort_index)

finite = st.floats(-3, 3, allow_nan=False, allow_infinity=False)


def test_sort_index_examples():
    assert sort_index((1, 0)) == ((0, 1), -1)
    assert sort_index((2, 0, 1)) == ((0, 1, 2), 1)
    assert sort_index((0, 0, 1)) == (None, 0)
    assert sort_index(()) == ((), 1)


def test_sort_index_out_of_range():
    with pytest.raises(IndexError):
        sort_index((0, 4), N=3)
    with pytest.raises(IndexError):
        sort_index((-1, 2))


@given(st.lists(st.integers(0, 7), min_size=0, max_size=6))
def test_sort_index_idempotent_and_consistent(raw):
    idx, sign = sort_index(raw)
    if len(set(raw)) < len(raw):
        assert (idx, sign) == (None, 0)
        return
    assert sort_index(idx) == (idx, 1)
    # parity agrees with the determinant of the permutation matrix
    perm = [sorted(raw).index(i) for i in raw]
    assert sign == round(np.linalg.det(np.eye(len(raw))[perm])) if raw else sign == 1


@given(st.permutations(range(5)))
def test_sort_index_composition(perm):
    # swapping two entries flips the sign
    _, s1 = sort_index(perm)
    swapped = list(perm)
    swapped[0], swapped[1] = swapped[1], swapped[0]
    _, s2 = sort_index(swapped)
    assert s1 == -s2


def test_check_index():
    assert check_index([0, 2], 3, 2) == (0, 2)
    for bad in ([2, 0], [1, 1], [0, 5], [0]):
        with pytest.raises(ValueError):
            check_index(bad, 3, 2)


def test_plucker_vector_lookup_and_dot():
    p = PluckerVector(2, 2, {(0, 1): 2.0, (1, 2): -1.0})
    assert p[(1, 0)] == -2.0
    assert p[(0, 2)] == 0.0
    assert p[(1, 1)] == 0.0
    q = PluckerVector(2, 2, {(0, 1): 3.0})
    assert p.dot(q) == 6.0
    assert (-p)[(0, 1)] == -2.0
    with pytest.raises(ValueError):
        PluckerVector(2, 2, {(1, 0): 1.0})


def test_jacobian_identity_embedding():
    p = jacobian_multivector([[1, 0], [0, 1], [0, 0]])
    assert p[(0, 1)] == 1 and p[(0, 2)] == 0 and p[(1, 2)] == 0


def test_jacobian_linear_graph():
    a, b = 0.7, -1.3
    p = jacobian_multivector([[1, 0], [0, 1], [a, b]])
    assert p[(0, 1)] == 1
    assert p[(0, 2)] == pytest.approx(b)
    assert p[(1, 2)] == pytest.approx(-a)


def test_jacobian_dimension_mismatch():
    with pytest.raises(ValueError):
        jacobian_multivector(np.ones((2, 3)))
    with pytest.raises(ValueError):
        jacobian_multivector(np.ones(3))


@pytest.mark.parametrize("k", [1, 2, 3, 4, 5])
def test_det_matches_numpy(k, rng):
    A = rng.normal(size=(k, k, 7))
    ref = np.array([np.linalg.det(A[:, :, i]) for i in range(7)])
    np.testing.assert_allclose(det(A), ref, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_cofactors_are_determinant_gradient(k, rng):
    A = rng.normal(size=(k, k))
    C = cofactors(A)
    h = 1e-6
    for r, c in itertools.product(range(k), repeat=2):
        E = np.zeros((k, k))
        E[r, c] = h
        fd = (np.linalg.det(A + E) - np.linalg.det(A - E)) / (2 * h)
        assert C[r, c] == pytest.approx(fd, abs=1e-7)


@settings(max_examples=50)
@given(arrays(float, (4, 2), elements=finite), arrays(float, (4,), elements=finite),
       arrays(float, (4,), elements=finite), finite, finite)
def test_jacobian_multilinear_alternating(P, u, w, alpha, beta):
    base = jacobian_multivector(P)
    # alternating: swapping columns flips every component
    swapped = jacobian_multivector(P[:, ::-1])
    for I in all_indices(3, 2):
        assert swapped[I] == pytest.approx(-base[I], abs=1e-12)
    # linear in the first column
    Pu, Pw, Pm = P.copy(), P.copy(), P.copy()
    Pu[:, 0], Pw[:, 0] = u, w
    Pm[:, 0] = alpha * u + beta * w
    pu, pw, pm = jacobian_multivector(Pu), jacobian_multivector(Pw), jacobian_multivector(Pm)
    for I in all_indices(3, 2):
        assert pm[I] == pytest.approx(alpha * pu[I] + beta * pw[I], abs=1e-9)


@settings(max_examples=50)
@given(st.integers(1, 3), st.integers(0, 2), st.integers(0, 2**31 - 1))
def test_plucker_residual_vanishes_on_jacobians(k, extra, seed):
    P = np.random.default_rng(seed).uniform(-2, 2, size=(k + 1 + extra, k))
    p = jacobian_multivector(P)
    assert plucker_residual(p) <= 1e-12 * max(1.0, p.max_abs() ** 2)


def test_plucker_residual_examples():
    p = PluckerVector(3, 2, {(0, 1): 1.0, (2, 3): 1.0})
    assert plucker_residual(p) == pytest.approx(1.0)
    assert plucker_residual(PluckerVector(3, 2, {})) == 0.0


def test_plucker_coordinates_raw_and_batched(rng):
    P = rng.normal(size=(3, 2, 5))
    out = plucker_coordinates(P, [(0, 1), (1, 0), (1, 1)])
    np.testing.assert_allclose(out[(1, 0)], -out[(0, 1)])
    np.testing.assert_array_equal(out[(1, 1)], 0.0)
    assert jacobian_multivector(P)[(0, 1)].shape == (5,)
