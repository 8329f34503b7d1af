from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from subsetprior.errors import DegenerateWeightsError, DimensionError, DomainError
from subsetprior.rng import stream
from subsetprior.subspace import Projection, projection_from_basis
from subsetprior.tilt import (
    DrawMatrix,
    Provenance,
    WeightedDraws,
    compute_log_w1,
    ess,
    normalized_weights,
    reweight,
    weight,
)

B = Provenance.BASE_POSTERIOR


def ex1():
    return projection_from_basis(np.array([[1.0], [1.0], [-1.0]]))


def test_draw_matrix_validation():
    with pytest.raises(DomainError):
        DrawMatrix(np.array([[np.nan, 1.0]]), B)
    with pytest.raises(DimensionError):
        DrawMatrix(np.zeros((0, 3)), B)
    d = DrawMatrix(np.ones((2, 2)), "prior")
    assert d.provenance is Provenance.PRIOR and d.columns == ("theta_1", "theta_2")
    with pytest.raises(ValueError):
        d.draws[0, 0] = 5.0


def test_log_w1_examples():
    P = ex1()
    on = DrawMatrix(np.outer([1.0, -2.0, 0.5], [1, 1, -1]), B)
    np.testing.assert_allclose(compute_log_w1(on, P), 0.0, atol=1e-12)
    assert compute_log_w1(DrawMatrix([[1.0, 1.0, 1.0]], B), P)[0] == pytest.approx(-4 / 3, abs=1e-12)
    X = DrawMatrix(np.random.default_rng(0).standard_normal((10, 3)), B)
    np.testing.assert_array_equal(compute_log_w1(X, Projection.identity(3)), 0.0)
    with pytest.raises(DimensionError):
        compute_log_w1(DrawMatrix(np.ones((2, 4)), B), P)


def test_reweight_examples():
    X = DrawMatrix(np.random.default_rng(1).standard_normal((50, 3)), B)
    wd = weight(X, ex1(), 1.0)
    np.testing.assert_array_equal(np.exp(reweight(wd, 0).log_w), 1.0)
    np.testing.assert_allclose(np.exp(reweight(wd, 2).log_w), np.exp(wd.log_w) ** 2, rtol=1e-12)
    np.testing.assert_array_equal(reweight(reweight(wd, 3), 5).log_w, reweight(wd, 5).log_w)
    with pytest.raises(DomainError):
        reweight(wd, -1.0)


def test_positive_log_w1_rejected():
    with pytest.raises(DomainError):
        WeightedDraws(DrawMatrix(np.ones((2, 1)), B), np.array([0.0, 0.1]), 1.0)


def test_normalized_weights_examples():
    np.testing.assert_allclose(normalized_weights(np.zeros(4)), 0.25)
    np.testing.assert_allclose(normalized_weights(np.array([0.0, np.log(3)])), [0.25, 0.75], atol=1e-15)
    w = normalized_weights(np.array([0.0, -1000.0]))
    assert w[0] == 1.0 and 0 <= w[1] < 1e-300
    with pytest.raises(DegenerateWeightsError):
        normalized_weights(np.array([-np.inf, -np.inf]))


def test_ess_examples():
    X = DrawMatrix(np.random.default_rng(2).standard_normal((40, 3)), B)
    assert ess(weight(X, ex1(), 0.0)) == 40
    assert ess(np.log([1.0, 1 / 3])) == pytest.approx(1.6, abs=1e-12)
    assert ess(np.array([0.0] + [-800.0] * 99)) == pytest.approx(1.0, abs=1e-12)


def test_weights_invariant_to_shifts_along_subspace():
    P = ex1()
    X = np.random.default_rng(4).standard_normal((20, 3))
    shifted = X + 2.7 * np.array([1.0, 1.0, -1.0])
    np.testing.assert_allclose(compute_log_w1(DrawMatrix(X, B), P), compute_log_w1(DrawMatrix(shifted, B), P), atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-50, 50))
def test_normalization_shift_invariance(seed, c):
    lw = -np.random.default_rng(seed).exponential(3.0, 30)
    np.testing.assert_allclose(normalized_weights(lw + c), normalized_weights(lw), atol=1e-12)
    assert normalized_weights(lw).sum() == pytest.approx(1.0, abs=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ess_nonincreasing_in_nu(seed):
    rng = stream(seed, "ess")
    lw1 = -0.5 * rng.chisquare(rng.integers(1, 5), size=rng.integers(2, 200))
    vals = [ess(nu * lw1) for nu in np.arange(0, 10.5, 0.5)]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(vals, vals[1:]))
