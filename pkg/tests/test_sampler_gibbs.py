from __future__ import annotations

import numpy as np
import pytest
import scipy.stats

from subsetprior.errors import DomainError, NormalizerUnderflowError
from subsetprior.evidence import ZSurrogate, zhat_spline_fit
from subsetprior.gaussian import GaussianApprox, sample_gaussian, tilt_gaussian
from subsetprior.sampler_gibbs import batch_means_se, chain_ess, gibbs_discrete, gibbs_gaussian
from subsetprior.sampler_is import resample, summarize, tilted_importance_sampler
from subsetprior.subspace import (
    Basis,
    ContinuousSpec,
    DiscreteGrid,
    constant_family,
    power_family,
    projection_from_basis,
)
from subsetprior.tilt import DrawMatrix, Provenance

POST = Provenance.BASE_POSTERIOR
PRIOR = Provenance.PRIOR
EX1_BASIS = Basis(np.array([[1.0], [1.0], [-1.0]]))


def normals(K, seed, prov, shift=0.0, p=3):
    return DrawMatrix(np.random.default_rng(seed).standard_normal((K, p)) + shift, prov)


def single_point_family():
    return constant_family(EX1_BASIS, DiscreteGrid.from_weights([1.0], [1.0]))


def test_chain_ess_and_batch_means():
    rng = np.random.default_rng(0)
    iid = rng.standard_normal(20_000)
    assert 0.8 * iid.size < chain_ess(iid) <= 1.2 * iid.size
    # AR(1) with rho=0.9 has integrated autocorrelation time 19
    ar = np.empty(50_000)
    ar[0] = 0.0
    e = rng.standard_normal(ar.size)
    for t in range(1, ar.size):
        ar[t] = 0.9 * ar[t - 1] + e[t]
    assert chain_ess(ar) == pytest.approx(ar.size / 19, rel=0.25)
    assert batch_means_se(iid) == pytest.approx(1 / np.sqrt(iid.size), rel=0.3)
    with pytest.raises(DomainError):
        batch_means_se(np.ones(10), 50)


def test_single_phi_value_matches_importance_sampler():
    post = normals(5000, 1, POST, shift=0.4)
    prior = normals(5000, 2, PRIOR)
    nu = 2.0
    tr = gibbs_discrete(post, prior, single_point_family(), nu, 40_000, seed=3)
    assert tr.accept_rate == 1.0
    kept = tr.kept()
    ts = tilted_importance_sampler(post, prior, projection_from_basis(EX1_BASIS), nu=nu)
    is_mean = summarize(resample(ts.weighted, 100_000, seed=4)).mean
    for j in range(3):
        x = kept.theta_draws[:, j]
        se = np.hypot(batch_means_se(x), x.std() / np.sqrt(1e5))
        assert abs(x.mean() - is_mean[j]) < 4 * se


def test_zero_nu_draws_phi_from_its_prior():
    post = normals(500, 5, POST)
    prior = normals(500, 6, PRIOR)
    grid = DiscreteGrid.from_weights([1.0, 2.0, 3.0], [0.2, 0.5, 0.3])
    fam = power_family(np.arange(1, 4), grid)
    tr = gibbs_discrete(post, prior, fam, 0.0, 30_000, seed=7, burn_in=0)
    assert tr.accept_rate == 1.0
    freq = dict(tr.phi_posterior_table())
    for v, m in zip(grid.values, grid.masses):
        assert abs(freq[v] - m) < 4 * np.sqrt(m * (1 - m) / 30_000)


def test_two_atom_two_phi_exact_joint():
    # two posterior atoms, two grid values: the joint target is a 2x2 table
    atoms = np.array([[0.3, 1.1, -0.5], [1.5, 0.2, 2.0]])
    post = DrawMatrix(atoms, POST)
    prior = normals(2000, 8, PRIOR)
    grid = DiscreteGrid.from_weights([1.0, 3.0], [0.3, 0.7])
    fam = power_family(np.arange(1, 4), grid)
    nu = 1.0
    # dense oracle
    Ps = [projection_from_basis(np.column_stack([np.ones(3), np.arange(1, 4) ** v])).matrix for v in grid.values]
    Y = prior.draws
    target = np.empty((2, 2))
    for q, P in enumerate(Ps):
        R = np.eye(3) - P
        rY = np.einsum("ij,jk,ik->i", Y, R, Y)
        Z = np.mean(np.exp(-0.5 * nu * rY))
        for k in range(2):
            target[k, q] = grid.masses[q] * np.exp(-0.5 * nu * atoms[k] @ R @ atoms[k]) / Z
    target /= target.sum()

    tr = gibbs_discrete(post, prior, fam, nu, 100_000, seed=9).kept()
    k_idx = (tr.theta_draws[:, 0] == atoms[1, 0]).astype(int)
    q_idx = (tr.phi_draws == 3.0).astype(int)
    for k in range(2):
        for q in range(2):
            ind = ((k_idx == k) & (q_idx == q)).astype(float)
            assert abs(ind.mean() - target[k, q]) < 4 * batch_means_se(ind)


def test_normalizer_underflow_is_an_error():
    post = normals(50, 10, POST)
    prior = normals(50, 11, PRIOR, shift=np.array([0.0, 0.0, 1e3]))
    fam = power_family(np.arange(1, 4), DiscreteGrid.from_weights([1.0, 2.0], [1, 1]))
    with pytest.raises(NormalizerUnderflowError):
        gibbs_discrete(post, prior, fam, 5.0, 100, seed=0)


def test_reproducible_and_init_checked():
    post = normals(300, 12, POST)
    prior = normals(300, 13, PRIOR)
    fam = power_family(np.arange(1, 4), DiscreteGrid.from_weights([1.0, 2.0, 4.0], [1, 1, 1]))
    a = gibbs_discrete(post, prior, fam, 1.5, 2000, seed=14)
    b = gibbs_discrete(post, prior, fam, 1.5, 2000, seed=14)
    np.testing.assert_array_equal(a.theta_draws, b.theta_draws)
    np.testing.assert_array_equal(a.phi_draws, b.phi_draws)
    assert a.burn_in == 200 and len(a.kept()) == 1800
    with pytest.raises(DomainError):
        gibbs_discrete(post, prior, fam, 1.5, 10, init_phi=1.7)


def test_gaussian_constant_family_matches_closed_form_tilt():
    g = GaussianApprox([0.5, -0.2, 0.8], 2.0 * np.eye(3))
    nu = 3.0
    fam = constant_family(EX1_BASIS, ContinuousSpec(scipy.stats.gamma(2.0), 15))
    prior = sample_gaussian(GaussianApprox(np.zeros(3), np.eye(3)), 5000, 15, PRIOR)
    sur = zhat_spline_fit(fam, prior, nu)
    tr = gibbs_gaussian(g, fam, nu, sur, 100_000, seed=16).kept()
    t = tilt_gaussian(g, projection_from_basis(EX1_BASIS), nu)
    x = tr.theta_draws
    se = x.std(axis=0) / np.sqrt(x.shape[0])
    assert np.all(np.abs(x.mean(axis=0) - t.m) < 4 * se)
    np.testing.assert_allclose(np.cov(x.T), t.covariance(), atol=0.02)


def test_gaussian_surrogate_nu_must_match():
    g = GaussianApprox(np.zeros(3), np.eye(3))
    sur = ZSurrogate(2.0, np.array([1.0]), np.array([0.5]), kind="table")
    with pytest.raises(DomainError):
        gibbs_gaussian(g, single_point_family(), 1.0, sur, 10)


def test_gaussian_phi_posterior_moves_toward_generating_power():
    # four dose arms whose means follow d**3; the phi prior is Gamma(2, rate 2)
    d = np.array([0.0, 0.25, 1 / 3, 0.5])
    g = GaussianApprox(-5.0 - 20.0 * d**3, 25.0 * np.eye(4))
    spec = ContinuousSpec(scipy.stats.gamma(2.0, scale=0.5), 15)
    fam = power_family(d, spec, mode="dose")
    prior = sample_gaussian(GaussianApprox(np.full(4, -5.0), 0.01 * np.eye(4)), 5000, 17, PRIOR)
    nu = 1.0
    sur = zhat_spline_fit(fam, prior, nu)
    assert sur.fit_diagnostics["max_heldout_rel_error"] < 0.02
    tr = gibbs_gaussian(g, fam, nu, sur, 20_000, seed=18).kept()
    phi = tr.phi_draws
    assert 0 < tr.accept_rate < 1
    se = batch_means_se(phi)
    # prior mean of phi is 1
    assert phi.mean() - 1.0 > 4 * se
    # a smaller generating power pulls phi the other way
    g2 = GaussianApprox(-5.0 - 20.0 * d**0.3, 25.0 * np.eye(4))
    phi2 = gibbs_gaussian(g2, fam, nu, sur, 20_000, seed=19).kept().phi_draws
    assert 1.0 - phi2.mean() > 4 * batch_means_se(phi2)
