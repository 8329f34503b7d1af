from __future__ import annotations

import numpy as np
import pytest

from subsetprior.errors import DegenerateWeightsError, DomainError, FlatProfileWarning, InsufficientDrawsError
from subsetprior.gaussian import GaussianApprox, sample_gaussian, tilt_gaussian
from subsetprior.sampler_is import (
    AliasTable,
    monotone_probe,
    parse_probe,
    resample,
    summarize,
    tilted_importance_sampler,
    weighted_correlation,
    weighted_quantile,
)
from subsetprior.subspace import Projection, projection_from_basis
from subsetprior.tilt import DrawMatrix, Provenance, WeightedDraws, compute_log_w1, normalized_weights, reweight

POST = Provenance.BASE_POSTERIOR
PRIOR = Provenance.PRIOR


def ex1():
    return projection_from_basis(np.array([[1.0], [1.0], [-1.0]]))


def test_alias_table_reconstructs_distribution():
    w = np.array([0.1, 0.0, 2.5, 1.4, 1.0])
    np.testing.assert_allclose(AliasTable(w).probabilities(), w / w.sum(), atol=1e-15)
    with pytest.raises(DegenerateWeightsError):
        AliasTable(np.zeros(3))
    with pytest.raises(DegenerateWeightsError):
        AliasTable(np.array([1.0, -1.0]))


def test_resample_two_atoms_binomial():
    base = DrawMatrix(np.array([[0.0], [1.0]]), POST)
    wd = WeightedDraws(base, np.log([0.75, 0.25]) - np.log(0.75), 1.0)
    out = resample(wd, 100_000, seed=3)
    assert out.provenance is Provenance.TILTED_POSTERIOR
    f = np.mean(out.draws[:, 0] == 0.0)
    assert abs(f - 0.75) < 4 * np.sqrt(0.75 * 0.25 / 1e5)


def test_resample_single_atom_and_uniform():
    base = DrawMatrix(np.arange(5.0)[:, None], POST)
    lw = np.full(5, -np.inf)
    lw[2] = 0.0
    out = resample(WeightedDraws(base, lw, 1.0), 1000, seed=1)
    assert np.all(out.draws == 2.0)
    u = resample(WeightedDraws(base, np.zeros(5), 1.0), 50_000, seed=2).draws[:, 0]
    freq = np.bincount(u.astype(int), minlength=5) / u.size
    assert np.all(np.abs(freq - 0.2) < 4 * np.sqrt(0.2 * 0.8 / u.size))


def test_resample_reproducible():
    base = DrawMatrix(np.random.default_rng(0).standard_normal((100, 2)), POST)
    wd = WeightedDraws(base, -np.random.default_rng(1).exponential(size=100), 1.0)
    np.testing.assert_array_equal(resample(wd, 500, 9).draws, resample(wd, 500, 9).draws)


def test_weighted_quantile_left_continuous():
    v = np.array([1.0, 2.0, 3.0, 4.0])
    w = np.full(4, 0.25)
    np.testing.assert_array_equal(weighted_quantile(v, w, [0.25, 0.2500001, 0.5, 1.0]), [1.0, 2.0, 2.0, 4.0])


def test_summarize_examples():
    s = summarize(DrawMatrix(np.arange(1.0, 6.0)[:, None], POST), 0.95)
    assert s.mean[0] == 3.0
    dec = DrawMatrix(np.array([[4.0, 3.0, 2.0, 1.0], [9.0, 5.0, 0.0, -1.0]]), POST)
    s = summarize(dec, probes={"mono": monotone_probe("decreasing")})
    assert s.functionals["mono"][0] == 1.0
    with pytest.raises(InsufficientDrawsError):
        summarize(DrawMatrix(np.ones((1, 2)), POST))
    with pytest.raises(DomainError):
        summarize(dec, level=1.5)


def test_probe_parsing():
    X = np.array([[1.0, 2.0, 3.0], [3.0, 1.0, 2.0]])
    np.testing.assert_array_equal(parse_probe("monotone:increasing")(X), [True, False])
    np.testing.assert_array_equal(parse_probe("monotone:increasing:1,2")(X), [True, True])
    for bad in ("bogus", "monotone", "monotone:sideways"):
        with pytest.raises(DomainError):
            parse_probe(bad)


def test_zero_tilt_summary_equals_unweighted():
    X = DrawMatrix(np.random.default_rng(3).standard_normal((501, 3)), POST)
    wd = reweight(WeightedDraws(X, compute_log_w1(X, ex1()), 1.0), 0.0)
    a, b = summarize(wd), summarize(X)
    for f in ("mean", "sd", "lo", "hi"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


def test_interval_mass_matches_level():
    X = DrawMatrix(np.random.default_rng(4).standard_normal((20_000, 3)), POST)
    wd = WeightedDraws(X, compute_log_w1(X, ex1()), 2.0)
    s = summarize(wd, 0.9)
    w = normalized_weights(wd)
    for j in range(3):
        x = X.draws[:, j]
        mass = w[(x >= s.lo[j]) & (x <= s.hi[j])].sum()
        assert s.lo[j] <= s.hi[j]
        assert abs(mass - 0.9) <= 1.0 / s.ess + 1e-3


def test_resample_then_summarize_agrees():
    X = DrawMatrix(np.random.default_rng(5).standard_normal((20_000, 3)), POST)
    wd = WeightedDraws(X, compute_log_w1(X, ex1()), 3.0)
    s = summarize(wd)
    r = summarize(resample(wd, 100_000, seed=6))
    se = np.sqrt(s.mean_se**2 + s.sd**2 / 1e5)
    assert np.all(np.abs(r.mean - s.mean) < 4 * se)


def test_identity_projection_leaves_posterior_unchanged():
    X = DrawMatrix(np.random.default_rng(6).standard_normal((2000, 3)), POST)
    Y = DrawMatrix(np.random.default_rng(7).standard_normal((2000, 3)), PRIOR)
    with pytest.warns(FlatProfileWarning):
        ts = tilted_importance_sampler(X, Y, Projection.identity(3))
    np.testing.assert_allclose(normalized_weights(ts.weighted), 1 / 2000, rtol=1e-12)
    a, b = summarize(ts.weighted), summarize(X)
    np.testing.assert_allclose(a.mean, b.mean, atol=1e-12)


def test_provenance_checks():
    X = DrawMatrix(np.zeros((3, 3)), POST)
    with pytest.raises(DomainError):
        tilted_importance_sampler(X, X, ex1(), nu=1.0)
    with pytest.raises(DomainError):
        tilted_importance_sampler(DrawMatrix(np.zeros((3, 3)), PRIOR), DrawMatrix(np.zeros((3, 3)), PRIOR), ex1(), nu=1.0)


@pytest.mark.parametrize("nu", [1.0, 3.0])
def test_tilted_correlation_matches_exact_gaussian_tilt(nu):
    # exact Gaussian base posterior: tilting it is the closed-form tilt
    g = GaussianApprox([0.3, 0.2, -0.1], 2.0 * np.eye(3))
    post = sample_gaussian(g, 50_000, 11)
    prior = sample_gaussian(GaussianApprox(np.zeros(3), np.eye(3)), 50_000, 12, PRIOR)
    ts = tilted_importance_sampler(post, prior, ex1(), nu=nu)
    r, se = weighted_correlation(ts.weighted, 0, 1)
    S = tilt_gaussian(g, ex1(), nu).covariance()
    assert abs(r - S[0, 1] / np.sqrt(S[0, 0] * S[1, 1])) < 3 * se
    m = tilt_gaussian(g, ex1(), nu).m
    s = summarize(ts.weighted)
    assert np.all(np.abs(s.mean - m) < 4 * s.mean_se)
