import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import GAIN_SETS, random_system
from twoscale import densemath as dm
from twoscale.errors import DimensionMismatch, InvalidEpsilon, SingularMatrix
from twoscale.plants import BuckParams, buck_closedloop
from twoscale.senscond import closed_loop_asc
from twoscale.sptheory import (
    PartitionedLinearSystem,
    boundary_transform,
    eigen_report,
    gap_ratio,
    match_spectra,
    qss_matrix,
    reduced_system,
    scale_epsilon,
    slow_fast_split,
    spectral_displacement,
    transform_matrix,
)

seeds = st.integers(0, 2**32 - 1)
dims = st.integers(1, 4)


def reference_buck_system():
    return buck_closedloop(BuckParams.reference_design()).system


def assert_same_spectrum(a, b, tol):
    _, dist = match_spectra(a, b)
    scale = np.maximum(1.0, np.abs(np.asarray(a)))
    assert np.all(dist <= tol * scale.max()), dist


# ---------------------------------------------------------------------------
# construction


def test_system_validates_shapes_and_epsilon():
    with pytest.raises(DimensionMismatch):
        PartitionedLinearSystem(np.eye(2), np.ones((2, 3)), np.ones((2, 2)), np.eye(2), np.ones((2, 1)))
    with pytest.raises(InvalidEpsilon):
        PartitionedLinearSystem(np.eye(1), [[1.0]], [[1.0]], [[-1.0]], [[1.0]], epsilon=0.0)
    sys = PartitionedLinearSystem(np.eye(1), [[1.0]], [[1.0]], [[-1.0]], [[1.0]])
    with pytest.raises(ValueError):
        sys.a11[0, 0] = 3.0  # stored blocks are read-only


def test_fast_blocks_divide_by_epsilon():
    sys = PartitionedLinearSystem([[0.0]], [[1.0]], [[2.0]], [[-4.0]], [[6.0]], epsilon=0.5)
    a21, a22, b = sys.fast_blocks()
    assert (a21[0, 0], a22[0, 0], b[0, 0]) == (4.0, -8.0, 12.0)


# ---------------------------------------------------------------------------
# quasi-steady state


def test_qss_examples():
    sys = PartitionedLinearSystem(np.eye(2), np.eye(2), np.zeros((2, 2)), -np.eye(2), np.eye(2))
    np.testing.assert_array_equal(qss_matrix(sys), np.zeros((2, 2)))
    sys = PartitionedLinearSystem(np.eye(2), np.eye(2), np.eye(2), -np.eye(2), np.eye(2))
    np.testing.assert_allclose(qss_matrix(sys), np.eye(2))


def test_qss_buck_hand_value():
    expected = -np.array([[1.0, -30.0], [-1.0 / 700.0, 0.0]])
    np.testing.assert_allclose(qss_matrix(reference_buck_system()), expected, rtol=1e-13, atol=1e-16)


def test_qss_singular_a22():
    sys = PartitionedLinearSystem(np.eye(1), [[1.0]], [[1.0]], [[0.0]], [[1.0]])
    with pytest.raises(SingularMatrix):
        qss_matrix(sys)


@given(dims, dims, seeds)
def test_qss_solves_fast_equation(n_x, n_z, seed):
    rng = np.random.default_rng(seed)
    sys = random_system(rng, n_x, n_z, 1)
    h = qss_matrix(sys)
    for x in rng.standard_normal((100, n_x)):
        a21x = sys.a21 @ x
        assert np.linalg.norm(a21x + sys.a22 @ h @ x) <= 1e-9 * max(np.linalg.norm(a21x), 1e-300)


# ---------------------------------------------------------------------------
# boundary layer, reduction, scaling


def test_boundary_transform_epsilon_zero(rng):
    sys = random_system(rng, 2, 3, 1)
    bl = boundary_transform(sys, epsilon=0.0)
    assert not bl.sigma1.any() and not bl.sigma2.any()


def test_boundary_transform_decoupled(rng):
    sys = PartitionedLinearSystem(rng.standard_normal((2, 2)), np.zeros((2, 2)), np.zeros((2, 2)), -np.eye(2) * 3, np.eye(2))
    bl = boundary_transform(sys)
    np.testing.assert_array_equal(bl.slow_block, sys.a11)
    assert not bl.sigma1.any() and not bl.sigma2.any()


def test_boundary_transform_matches_direct_formula(rng):
    sys = random_system(rng, 2, 2, 1, epsilon=0.3)
    inv = np.linalg.inv(sys.a22)
    p = inv @ sys.a21
    bl = boundary_transform(sys)
    np.testing.assert_allclose(bl.slow_block, sys.a11 - sys.a12 @ p, rtol=1e-12)
    np.testing.assert_allclose(bl.sigma1, 0.3 * (p @ sys.a11 - p @ sys.a12 @ p), rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(bl.sigma2, 0.3 * p @ sys.a12, rtol=1e-12, atol=1e-14)


@given(seeds, st.floats(0.01, 10.0))
def test_sigma_terms_linear_in_epsilon(seed, eps):
    sys = random_system(np.random.default_rng(seed), 2, 2, 1)
    one = boundary_transform(sys, 1.0)
    scaled = boundary_transform(sys, eps)
    np.testing.assert_allclose(scaled.sigma1, eps * one.sigma1, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(scaled.sigma2, eps * one.sigma2, rtol=1e-12, atol=1e-14)


def test_boundary_layer_matrix_is_similarity_at_epsilon_one(rng):
    # with epsilon = 1 the (x, y) coordinates are an exact change of basis
    sys = random_system(rng, 2, 3, 1)
    t = transform_matrix(sys)
    expected = np.linalg.inv(t) @ sys.full_matrix() @ t
    np.testing.assert_allclose(boundary_transform(sys).matrix(), expected, rtol=1e-10, atol=1e-10)


def test_reduced_system_examples():
    a11 = np.array([[1.0, 2.0], [3.0, 4.0]])
    sys = PartitionedLinearSystem(a11, np.zeros((2, 2)), np.eye(2), -np.eye(2), np.eye(2))
    slow, fast = reduced_system(sys)
    np.testing.assert_array_equal(slow, a11)
    np.testing.assert_array_equal(fast, -np.eye(2))
    sys = PartitionedLinearSystem(np.zeros((2, 2)), np.eye(2), np.eye(2), -np.eye(2), np.eye(2))
    np.testing.assert_allclose(reduced_system(sys)[0], np.eye(2))


def test_reduced_slow_close_to_conditioned_slow_pair():
    sys = reference_buck_system()
    slow, _ = reduced_system(sys)
    rep = eigen_report(sys)
    slow_red = np.sort(dm.eigenvalues(slow).real)[::-1][0]
    slow_sc = slow_fast_split(rep.full_with_sc, 1)[0][0]
    # dominant slow pole agrees within the coupling error (a few percent here)
    assert abs(slow_red - slow_sc.real) / abs(slow_sc.real) < 0.06


def test_scale_epsilon_examples(rng):
    sys = random_system(rng, 2, 2, 1)
    same = scale_epsilon(sys, 1.0)
    for name in ("a11", "a12", "a21", "a22", "b"):
        np.testing.assert_array_equal(getattr(same, name), getattr(sys, name))
    half = scale_epsilon(PartitionedLinearSystem([[0.0]], [[1.0]], [[1.0]], [[-1.0]], [[1.0]]), 0.5)
    assert half.fast_blocks()[1][0, 0] == -2.0
    with pytest.raises(InvalidEpsilon):
        scale_epsilon(sys, 0.0)
    with pytest.raises(InvalidEpsilon):
        scale_epsilon(sys, -1.0)


@given(seeds, st.floats(1e-4, 1e2))
def test_scale_epsilon_keeps_sensitivity_and_is_reversible(seed, eps):
    sys = random_system(np.random.default_rng(seed), 2, 3, 1)
    scaled = scale_epsilon(sys, eps)
    np.testing.assert_allclose(qss_matrix(scaled), qss_matrix(sys), rtol=1e-14)
    # slow blocks never change, fast blocks change by exactly 1/eps
    np.testing.assert_array_equal(scaled.a11, sys.a11)
    np.testing.assert_allclose(scaled.fast_blocks()[1], sys.fast_blocks()[1] / eps, rtol=1e-15)
    back = scale_epsilon(scaled, 1.0 / eps)
    np.testing.assert_allclose(back.epsilon, sys.epsilon, rtol=1e-15)


# ---------------------------------------------------------------------------
# eigen report


def test_eigen_report_block_diagonal(rng):
    a11 = rng.standard_normal((2, 2))
    a22 = -5.0 * np.eye(3) + rng.standard_normal((3, 3))
    sys = PartitionedLinearSystem(a11, np.zeros((2, 3)), np.zeros((3, 2)), a22, rng.standard_normal((3, 1)))
    rep = eigen_report(sys)
    assert_same_spectrum(rep.full_no_sc, rep.reduced_union, 1e-12)
    assert_same_spectrum(rep.full_no_sc, np.concatenate([np.linalg.eigvals(a11), np.linalg.eigvals(a22)]), 1e-12)


def test_eigen_report_gain_set_1():
    sys = buck_closedloop(BuckParams.reference_design().with_gains(*GAIN_SETS["test-1"])).system
    rep = eigen_report(sys)
    no_sc = [-474 + 2433j, -474 - 2433j, -579 + 532j, -579 - 532j]
    with_sc = [-1512 + 2019j, -1512 - 2019j, -463 + 618j, -463 - 618j]
    _, d1 = match_spectra(rep.full_no_sc, no_sc)
    _, d2 = match_spectra(rep.full_with_sc, with_sc)
    assert d1.max() < 5.0 and d2.max() < 5.0
    assert np.trace(closed_loop_asc(sys)) == pytest.approx(-3948.5, abs=0.1)


def test_eigen_report_gain_set_3_fast_block():
    sys = buck_closedloop(BuckParams.reference_design().with_gains(*GAIN_SETS["test-3"])).system
    rep = eigen_report(sys)
    _, d = match_spectra(rep.full_with_sc[np.abs(rep.full_with_sc.imag) > 4000], [-5021 + 5211j, -5021 - 5211j])
    assert d.max() < 10.0
    fast = dm.eigenvalues(sys.fast_blocks()[1])
    _, d = match_spectra(fast, [-5000 + 5000j, -5000 - 5000j])
    assert d.max() < 1e-8


@given(dims, dims, seeds)
def test_eigen_report_trace_and_lengths(n_x, n_z, seed):
    sys = random_system(np.random.default_rng(seed), n_x, n_z, 1)
    rep = eigen_report(sys)
    n = n_x + n_z
    assert len(rep.full_no_sc) == len(rep.full_with_sc) == len(rep.reduced_union) == n
    tr = np.trace(sys.a11) + np.trace(sys.a22)
    assert abs(rep.full_no_sc.sum() - tr) <= 1e-6 * max(1.0, abs(tr))


def test_gap_ratio_and_split():
    eigs = np.array([-1.0, -2.0, -50.0 + 3j, -50.0 - 3j])
    slow, fast = slow_fast_split(eigs, 2)
    assert set(slow.real) == {-1.0, -2.0}
    assert gap_ratio(eigs, 2) == pytest.approx(25.0)
    assert gap_ratio(eigs, 0) == float("inf")


def test_match_spectra_and_displacement():
    a = [1.0, 2.0 + 1j, 2.0 - 1j]
    b = [2.1 - 1j, 0.9, 2.1 + 1j]
    pairs, dist = match_spectra(a, b)
    assert pairs == [(0, 1), (1, 2), (2, 0)]
    assert spectral_displacement(a, b) == pytest.approx(0.3)
    assert spectral_displacement(a, a) == 0.0
    with pytest.raises(DimensionMismatch):
        match_spectra([1.0], [1.0, 2.0])
