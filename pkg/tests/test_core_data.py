import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from twophase.data import (AuxiliaryMap, AuxMode, Design, DesignSpec, PhaseOneRecord,
                           StepFunction, TwoPhaseSample, build_auxiliary, evaluate_step,
                           identity_builder)
from twophase.exceptions import DataError, EmptyStratumError
from twophase.links import LinearG, ScaledLogit, TruncatedLinear, get_g_family


# step functions

def test_evaluate_step_examples():
    f = StepFunction([1.0, 2.0], [0.5, 1.2])
    assert evaluate_step(f, 0.5) == 0.0
    assert evaluate_step(f, 1.0) == 0.5
    assert evaluate_step(f, 3.0) == 1.2


def test_evaluate_step_rejects_negative_time():
    with pytest.raises(DataError):
        evaluate_step(StepFunction([1.0], [1.0]), -1.0)


def test_step_function_validation():
    with pytest.raises(DataError):
        StepFunction([1.0, 1.0], [0.1, 0.2])
    with pytest.raises(DataError):
        StepFunction([1.0, 2.0], [0.3, 0.2])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.01, 5), min_size=1, max_size=15, unique=True),
       st.lists(st.floats(0, 100), min_size=2, max_size=40))
def test_step_function_monotone(jumps, ts):
    jumps = np.sort(jumps)
    incr = np.linspace(0.1, 1.0, len(jumps))
    f = StepFunction.from_increments(jumps, incr)
    ts = np.sort(ts)
    vals = f(ts)
    assert np.all(np.diff(vals) >= 0)


# auxiliaries

def test_build_auxiliary_examples():
    rec1 = PhaseOneRecord(1.0, 0, np.array([0.3]), 1)
    rec2 = PhaseOneRecord(1.0, 0, np.array([0.3]), 2)
    pooled = AuxiliaryMap(identity_builder())
    within = AuxiliaryMap(identity_builder(), mode=AuxMode.WITHIN_STRATUM)
    within_int = AuxiliaryMap(identity_builder(intercept=True), mode=AuxMode.WITHIN_STRATUM)
    np.testing.assert_array_equal(build_auxiliary(pooled, rec1, 2), [0.3])
    np.testing.assert_array_equal(build_auxiliary(within, rec2, 2), [0.0, 0.3])
    np.testing.assert_array_equal(build_auxiliary(within_int, rec1, 2), [1.0, 0.3, 0.0, 0.0])


def test_build_auxiliary_dimension_mismatch():
    aux = AuxiliaryMap(identity_builder(), k=2)
    with pytest.raises(DataError):
        build_auxiliary(aux, PhaseOneRecord(1.0, 0, np.array([0.3]), 1), 1)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(0, 10_000))
def test_within_blocks_reconstruct_z(J, k, seed):
    rng = np.random.default_rng(seed)
    n = 30
    u = rng.normal(size=(n, k))
    stratum = rng.integers(1, J + 1, n)
    aux = AuxiliaryMap(identity_builder(), mode=AuxMode.WITHIN_STRATUM)
    for i in range(n):
        z = build_auxiliary(aux, PhaseOneRecord(1.0, 0, u[i], int(stratum[i])), J)
        blocks = z.reshape(J, k)
        nonzero = [j for j in range(J) if np.any(blocks[j] != 0)]
        assert set(nonzero) <= {stratum[i] - 1}
        np.testing.assert_array_equal(blocks.sum(0), u[i])


def test_auxiliary_clamped_with_warning():
    aux = AuxiliaryMap(identity_builder(), bound=10.0)
    with pytest.warns(RuntimeWarning):
        z = aux.base_matrix(np.ones(2), np.zeros(2), np.array([[5.0], [50.0]]))
    np.testing.assert_array_equal(z.ravel(), [5.0, 10.0])


# samples

def test_pi0_exact_from_counts():
    stratum = np.array([1] * 7 + [2] * 3)
    xi = np.array([1, 1, 0, 0, 1, 0, 0, 1, 0, 1])
    s = TwoPhaseSample.from_arrays(np.arange(1, 11), np.zeros(10, int), np.zeros((10, 1)),
                                   stratum, xi, np.ones((10, 1)), 2)
    assert np.all(s.pi0[:7] == 3 / 7)
    assert np.all(s.pi0[7:] == 2 / 3)
    assert s.N_j.tolist() == [7, 3] and s.n_j.tolist() == [3, 2]
    assert s.N_j.sum() == s.N


def test_missing_x_for_selected_row_names_the_row():
    x = np.array([[1.0], [np.nan], [2.0]])
    with pytest.raises(DataError, match="row 2"):
        TwoPhaseSample.from_arrays([1, 2, 3], [0, 1, 0], np.zeros((3, 1)), [1, 1, 1],
                                   [1, 1, 0], x, 1)


def test_unselected_x_hidden():
    s = TwoPhaseSample.from_arrays([1, 2], [0, 1], np.zeros((2, 1)), [1, 1], [1, 0],
                                   [[1.0], [2.0]], 1)
    assert np.isnan(s.x[1, 0])
    assert s.record(1).stratum == 1


def test_empty_stratum_rejected():
    with pytest.raises(EmptyStratumError):
        TwoPhaseSample.from_arrays([1, 2], [0, 1], np.zeros((2, 1)), [1, 1], [1, 1],
                                   [[1.0], [2.0]], 2)


def test_design_spec_checks_floor_and_totality():
    with pytest.raises(DataError):
        DesignSpec.cut_on_u([0.0], [0.5, 1e-5])
    spec = DesignSpec(2, lambda y, d, u: np.full(len(y), 3), (0.5, 0.5))
    with pytest.raises(DataError):
        spec.assign(np.ones(2), np.zeros(2), np.zeros((2, 1)))


def test_design_spec_bernoulli_variant():
    spec = DesignSpec.cut_on_u([0.0], [0.5, 0.5]).with_design("bernoulli")
    assert spec.design is Design.BERNOULLI


# links

@pytest.mark.parametrize("g", [TruncatedLinear(), ScaledLogit(), ScaledLogit(0.3, 3.0),
                               TruncatedLinear(0.5, 2.0, 1e-2)])
def test_g_function_contract(g):
    x = np.linspace(-50, 50, 20001)
    v = g(x)
    assert g(0.0) == pytest.approx(1.0, abs=1e-15)
    assert np.all(v >= g.lower - 1e-15) and np.all(v <= g.upper + 1e-15)
    assert np.all(np.diff(v) >= 0)
    # derivative matches finite differences everywhere, including the blends
    h = 1e-7
    fd = (g(x + h) - g(x - h)) / (2 * h)
    np.testing.assert_allclose(g.derivative(x), fd, atol=2e-5)
    assert g.derivative(0.0) > 0


def test_truncated_linear_is_identity_plus_one_in_the_middle():
    g = TruncatedLinear()
    x = np.linspace(-0.89, 8.99, 50)
    np.testing.assert_allclose(g(x), 1 + x, rtol=0, atol=1e-15)


def test_scaled_logit_unit_slope_at_zero():
    assert ScaledLogit().derivative(0.0) == pytest.approx(1.0, rel=1e-12)


def test_bad_bounds_and_family_names():
    with pytest.raises(ValueError):
        TruncatedLinear(1.5, 10)
    with pytest.raises(ValueError):
        get_g_family("cubic")
    assert isinstance(get_g_family("linear"), LinearG)
