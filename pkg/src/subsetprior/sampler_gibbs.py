"""Two-block MH-within-Gibbs samplers for an unknown subspace parameter phi.

Both samplers alternate a theta-block given phi with an independence
Metropolis-Hastings step for phi that proposes from the phi prior. For a
proposal ``phi*`` the log acceptance ratio is

    -nu/2 * (r(theta; phi*) - r(theta; phi)) + log Z(phi) - log Z(phi*)

with ``r`` the residual quadratic form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import DimensionError, DomainError, NormalizerUnderflowError, NotPositiveDefiniteError
from .evidence import LOG_Z_FLOOR, ZSurrogate, log_z_grid
from .gaussian import GaussianApprox
from .rng import as_generator
from .sampler_is import AliasTable
from .subspace import DiscreteGrid, SubspaceFamily, orthonormal_range
from .tilt import DrawMatrix, Provenance


@dataclass
class GibbsTrace:
    theta_draws: np.ndarray
    phi_draws: np.ndarray
    accept_rate: float
    nu: float
    seed: int | None
    burn_in: int
    columns: tuple[str, ...] | None = None

    def __len__(self):
        return self.phi_draws.size

    def kept(self) -> "GibbsTrace":
        """The trace with the burn-in prefix removed."""
        b = self.burn_in
        return GibbsTrace(self.theta_draws[b:], self.phi_draws[b:], self.accept_rate, self.nu, self.seed, 0, self.columns)

    def draws(self) -> DrawMatrix:
        return DrawMatrix(self.theta_draws, Provenance.TILTED_POSTERIOR, self.seed, self.columns)

    def phi_posterior_table(self) -> list[tuple[float, float]]:
        vals, counts = np.unique(self.phi_draws[self.burn_in:], return_counts=True)
        n = counts.sum()
        return [(float(v), float(c / n)) for v, c in zip(vals, counts)]

    def ess_per_coordinate(self) -> np.ndarray:
        x = self.theta_draws[self.burn_in:]
        return np.array([chain_ess(x[:, j]) for j in range(x.shape[1])])


def chain_ess(x: np.ndarray) -> float:
    """Effective sample size of a scalar chain (Geyer initial monotone sequence)."""
    x = np.asarray(x, dtype=float)
    n = x.size
    if n < 4:
        return float(n)
    x = x - x.mean()
    var = x @ x / n
    if var == 0:
        return float(n)
    f = np.fft.rfft(x, 2 * n)
    acf = np.fft.irfft(f * np.conj(f))[:n] / (n * var)
    pairs = acf[: n - n % 2].reshape(-1, 2).sum(axis=1)
    stop = np.argmax(pairs <= 0) if np.any(pairs <= 0) else pairs.size
    gamma = np.minimum.accumulate(pairs[:stop]) if stop else pairs[:1]
    tau = -1.0 + 2.0 * float(gamma.sum())
    return float(n / max(tau, 1e-12)) if tau > 0 else float(n)


def batch_means_se(x: np.ndarray, n_batches: int = 50) -> float:
    """Standard error of a chain average from non-overlapping batch means."""
    x = np.asarray(x, dtype=float)
    m = x.size // n_batches
    if m < 1:
        raise DomainError("chain too short for the requested number of batches")
    means = x[: m * n_batches].reshape(n_batches, m).mean(axis=1)
    return float(means.std(ddof=1) / math.sqrt(n_batches))


def _default_burn_in(K_nu: int, burn_in):
    return int(0.1 * K_nu) if burn_in is None else int(burn_in)


def _grid_index(values: np.ndarray, phi: float) -> int:
    i = int(np.argmin(np.abs(values - phi)))
    if not math.isclose(values[i], phi, rel_tol=1e-12, abs_tol=1e-15):
        raise DomainError(f"initial phi={phi!r} is not on the phi grid")
    return i


def gibbs_discrete(
    post_draws: DrawMatrix,
    prior_draws: DrawMatrix,
    family: SubspaceFamily,
    nu: float,
    K_nu: int,
    init_phi: float | None = None,
    seed=0,
    Q: int | None = None,
    burn_in: int | None = None,
) -> GibbsTrace:
    """Gibbs sampler over a finite phi grid using resampled base-posterior atoms.

    Per grid value, the normalizer is estimated from the prior draws and an
    alias table is built over the posterior atoms' tilt weights, so each
    theta-block is O(1). A continuous family is first reduced to ``Q``
    quantiles.
    """
    if nu < 0:
        raise DomainError("nu must be nonnegative")
    if post_draws.p != prior_draws.p:
        raise DimensionError("posterior and prior draws differ in dimension")
    fam = family.discrete(Q)
    grid: DiscreteGrid = fam.support
    values = np.asarray(grid.values, dtype=float)
    nq = values.size

    log_z = log_z_grid(fam, prior_draws, nu, values)
    for q in range(nq):
        if log_z[q] < LOG_Z_FLOOR:
            raise NormalizerUnderflowError(float(values[q]), float(log_z[q]))

    X = post_draws.draws
    sq = np.einsum("ij,ij->i", X, X)
    Qs = orthonormal_range(np.stack([fam.basis_matrix(v) for v in values]))
    resid = np.empty((nq, X.shape[0]))
    for q in range(nq):
        proj = X @ Qs[q]
        resid[q] = np.clip(sq - np.einsum("ij,ij->i", proj, proj), 0.0, None)

    tables = []
    for q in range(nq):
        lw = -0.5 * nu * resid[q]
        tables.append(AliasTable(np.exp(lw - lw.max())))

    rng = as_generator(seed, "gibbs_discrete")
    q_prop = AliasTable(grid.masses).sample(K_nu, rng).tolist()
    u_idx = rng.random(K_nu).tolist()
    u_coin = rng.random(K_nu).tolist()
    log_u = np.log(rng.random(K_nu)).tolist()

    half_nu = 0.5 * nu
    R = resid.tolist()
    lz = log_z.tolist()
    probs = [t.prob.tolist() for t in tables]
    aliases = [t.alias.tolist() for t in tables]
    Ky = X.shape[0]

    q = _grid_index(values, fam.prior_mode() if init_phi is None else init_phi)
    atoms = [0] * K_nu
    phis = [0] * K_nu
    accepted = 0
    for it in range(K_nu):
        j = int(u_idx[it] * Ky)
        if j == Ky:
            j -= 1
        k = j if u_coin[it] < probs[q][j] else aliases[q][j]
        qs = q_prop[it]
        la = -half_nu * (R[qs][k] - R[q][k]) + lz[q] - lz[qs]
        if la >= 0.0 or log_u[it] < la:
            q = qs
            accepted += 1
        atoms[it] = k
        phis[it] = q

    return GibbsTrace(
        X[np.asarray(atoms, dtype=np.intp)],
        values[np.asarray(phis, dtype=np.intp)],
        accepted / K_nu,
        float(nu),
        seed if isinstance(seed, int) else None,
        _default_burn_in(K_nu, burn_in),
        post_draws.columns,
    )


class _TiltedState:
    __slots__ = ("Qb", "mean", "factor", "log_z")

    def __init__(self, g: GaussianApprox, Qb: np.ndarray, nu: float, log_z: float):
        omega_t = g.omega + nu * (np.eye(g.p) - Qb @ Qb.T)
        omega_t = 0.5 * (omega_t + omega_t.T)
        try:
            L = np.linalg.cholesky(omega_t)
        except np.linalg.LinAlgError as exc:
            raise NotPositiveDefiniteError("tilted precision lost positive definiteness") from exc
        self.Qb = Qb
        self.mean = scipy.linalg.cho_solve((L, True), g.omega @ g.m)
        # theta = mean + L^{-T} z
        self.factor = scipy.linalg.solve_triangular(L, np.eye(g.p), lower=True).T
        self.log_z = log_z


def gibbs_gaussian(
    g: GaussianApprox,
    family: SubspaceFamily,
    nu: float,
    surrogate: ZSurrogate,
    K_nu: int,
    init_phi: float | None = None,
    seed=0,
    burn_in: int | None = None,
) -> GibbsTrace:
    """Gibbs sampler whose theta-block draws exactly from the tilted normal.

    The normalizer at each phi comes from ``surrogate``, which must have been
    fitted at the same ``nu``.
    """
    if nu < 0:
        raise DomainError("nu must be nonnegative")
    if not math.isclose(surrogate.nu, nu, rel_tol=1e-12, abs_tol=1e-15):
        raise DomainError(f"surrogate was fitted at nu={surrogate.nu}, sampler asked for nu={nu}")
    rng = as_generator(seed, "gibbs_gaussian")
    support = family.support
    if isinstance(support, DiscreteGrid):
        proposals = support.values[AliasTable(support.masses).sample(K_nu, rng)]
    else:
        proposals = support.sample(K_nu, rng)
    z = rng.standard_normal((K_nu, g.p))
    log_u = np.log(rng.random(K_nu))

    phi0 = family.prior_mode() if init_phi is None else float(init_phi)
    Q0 = orthonormal_range(family.basis_matrix(phi0)[None])[0]
    if Q0.shape[0] != g.p:
        raise DimensionError("family dimension does not match the approximation")
    Qprop = orthonormal_range(np.stack([family.basis_matrix(v) for v in proposals]))
    lz_prop = surrogate.log_predict(proposals)

    cache: dict[float, _TiltedState] = {}

    def state_for(phi, Qb, lz):
        st = cache.get(phi)
        if st is None:
            st = _TiltedState(g, Qb, nu, lz)
            if len(cache) < 4096:
                cache[phi] = st
        return st

    state = state_for(phi0, Q0, float(surrogate.log_predict(phi0)))
    phi = phi0
    half_nu = 0.5 * nu
    theta = np.empty((K_nu, g.p))
    phi_out = np.empty(K_nu)
    accepted = 0
    for it in range(K_nu):
        th = state.mean + state.factor @ z[it]
        theta[it] = th
        a = state.Qb.T @ th
        Qs = Qprop[it]
        b = Qs.T @ th
        # r(phi*) - r(phi) = |Q_c' th|^2 - |Q_*' th|^2
        la = -half_nu * (a @ a - b @ b) + state.log_z - lz_prop[it]
        if la >= 0.0 or log_u[it] < la:
            phi = float(proposals[it])
            state = state_for(phi, Qs, float(lz_prop[it]))
            accepted += 1
        phi_out[it] = phi

    return GibbsTrace(
        theta,
        phi_out,
        accepted / K_nu,
        float(nu),
        seed if isinstance(seed, int) else None,
        _default_burn_in(K_nu, burn_in),
    )
