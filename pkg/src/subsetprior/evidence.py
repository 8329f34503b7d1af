"""Normalizing constants, Bayes factors and selection of the tilting strength."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.optimize
from scipy.special import logsumexp

from .errors import (
    BoundaryMaximumWarning,
    DegenerateWeightsError,
    DimensionError,
    DomainError,
    FlatProfileWarning,
)
from .gaussian import GaussianApprox, cholesky_lower
from .subspace import (
    ContinuousSpec,
    Projection,
    SubspaceFamily,
    ns_design,
    orthonormal_range,
)
from .tilt import DrawMatrix, Provenance, WeightedDraws, compute_log_w1, log_ess

Z_FLOOR = 1e-300
LOG_Z_FLOOR = math.log(Z_FLOOR)
GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class ZEstimate:
    nu: float
    phi: float | None
    value: float
    mc_se: float
    K0: int
    log_value: float


@dataclass(frozen=True)
class BayesFactor:
    value: float
    mc_se: float
    log_value: float


def _mean_weight(lw1: np.ndarray, nu: float):
    """Log of the mean of ``exp(nu * lw1)`` and the relative MC variance of that mean."""
    K = lw1.size
    if nu == 0.0:
        return 0.0, 0.0
    lw = nu * lw1
    top = float(np.max(lw))
    if not np.isfinite(top):
        raise DegenerateWeightsError("all weights underflow")
    w = np.exp(lw - top)
    mean = w.mean()
    log_mean = top + math.log(mean) if mean > 0 else -math.inf
    rel_var = float(np.var(w, ddof=1) / mean**2 / K) if K > 1 else 0.0
    return log_mean, rel_var


def z_from_log_w1(lw1: np.ndarray, nu: float, phi: float | None = None) -> ZEstimate:
    lw1 = np.asarray(lw1, dtype=float)
    log_z, rel_var = _mean_weight(lw1, nu)
    log_z = min(log_z, 0.0)
    value = math.exp(log_z)
    return ZEstimate(float(nu), phi, value, value * math.sqrt(rel_var), lw1.size, log_z)


def z_hat(prior_draws: DrawMatrix, P: Projection, nu: float, phi: float | None = None) -> ZEstimate:
    """Monte Carlo estimate of the tilting normalizer from base-prior draws."""
    if prior_draws.provenance is not Provenance.PRIOR:
        raise DomainError("normalizer estimation needs draws from the base prior")
    if nu < 0:
        raise DomainError("nu must be nonnegative")
    return z_from_log_w1(compute_log_w1(prior_draws, P), nu, phi)


def _log_bf(lw_post: np.ndarray, lw_prior: np.ndarray, nu: float) -> float:
    if nu == 0.0:
        return 0.0
    denom = logsumexp(nu * lw_prior) - math.log(lw_prior.size)
    if not np.isfinite(denom):
        raise DegenerateWeightsError("prior weights all underflow; normalizer is zero")
    return float(logsumexp(nu * lw_post) - math.log(lw_post.size) - denom)


def _check_pair(post_wd: WeightedDraws, prior_wd: WeightedDraws):
    if prior_wd.base.provenance is not Provenance.PRIOR:
        raise DomainError("denominator draws must come from the base prior")
    if post_wd.base.provenance is Provenance.PRIOR:
        raise DomainError("numerator draws must come from the base posterior")
    if post_wd.base.p != prior_wd.base.p:
        raise DimensionError("posterior and prior draws have different dimensions")


def bayes_factor(post_wd: WeightedDraws, prior_wd: WeightedDraws, nu: float) -> BayesFactor:
    """Ratio of mean tilt weights, posterior over prior, with a delta-method error."""
    _check_pair(post_wd, prior_wd)
    if nu < 0:
        raise DomainError("nu must be nonnegative")
    if nu == 0:
        return BayesFactor(1.0, 0.0, 0.0)
    log_num, rv_num = _mean_weight(post_wd.log_w1, nu)
    log_den, rv_den = _mean_weight(prior_wd.log_w1, nu)
    if not np.isfinite(log_den):
        raise DegenerateWeightsError("prior weights all underflow; normalizer is zero")
    log_bf = log_num - log_den
    value = math.exp(log_bf) if log_bf < 700 else math.inf
    return BayesFactor(value, value * math.sqrt(rv_num + rv_den), log_bf)


def log_bf_numerator_gaussian(g: GaussianApprox, P: Projection, nu: float) -> float:
    if nu < 0:
        raise DomainError("nu must be nonnegative")
    if P.dim != g.p:
        raise DimensionError("projection and approximation dimensions differ")
    if nu == 0:
        return 0.0
    omega_t = g.omega + nu * P.complement()
    Lt = cholesky_lower(0.5 * (omega_t + omega_t.T))
    b = g.omega @ g.m
    c = scipy.linalg.solve_triangular(Lt, b, lower=True)
    logdet_t = 2.0 * float(np.sum(np.log(np.diag(Lt))))
    quad = float(g.m @ b) - float(c @ c)
    return min(0.5 * (g.logdet_precision() - logdet_t) - 0.5 * quad, 0.0)


def bf_numerator_gaussian(g: GaussianApprox, P: Projection, nu: float) -> float:
    """Posterior expectation of the tilt weight under the normal approximation."""
    return math.exp(log_bf_numerator_gaussian(g, P, nu))


def bayes_factor_gaussian(g: GaussianApprox, P: Projection, prior_wd: WeightedDraws, nu: float) -> BayesFactor:
    """Bayes factor with an analytic numerator and a Monte Carlo normalizer."""
    if nu == 0:
        return BayesFactor(1.0, 0.0, 0.0)
    log_den, rv_den = _mean_weight(prior_wd.log_w1, nu)
    log_bf = log_bf_numerator_gaussian(g, P, nu) - log_den
    value = math.exp(log_bf) if log_bf < 700 else math.inf
    return BayesFactor(value, value * math.sqrt(rv_den), log_bf)


# ---------------------------------------------------------------------------
# selecting nu
# ---------------------------------------------------------------------------


@dataclass
class NuSelection:
    nu_star: float
    bf_at_star: BayesFactor
    profile: list[tuple[float, float]]
    log_profile: list[tuple[float, float]] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)


def scan_grid(lo: float, hi: float, n: int = 50) -> np.ndarray:
    """Log-spaced scan over [lo, hi]; when lo is 0 the grid starts at 0 and hi * 1e-5."""
    if lo > 0:
        return np.geomspace(lo, hi, n)
    return np.concatenate([[0.0], np.geomspace(hi * 1e-5, hi, n - 1)])


def _golden_max(f, a: float, c: float, tol: float):
    x1 = c - GOLDEN * (c - a)
    x2 = a + GOLDEN * (c - a)
    f1, f2 = f(x1), f(x2)
    while (c - a) > tol * max(1.0, abs(x1) + abs(x2)):
        if f1 >= f2:
            c, x2, f2 = x2, x1, f1
            x1 = c - GOLDEN * (c - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + GOLDEN * (c - a)
            f2 = f(x2)
    return (x1, f1) if f1 >= f2 else (x2, f2)


def maximize_log_bf(log_bf, nu_bounds=(0.0, 1e3), tolerance: float = 1e-6, n_scan: int = 50):
    """Maximize a log Bayes factor over nu: log-spaced scan, then golden section.

    Returns ``(nu_star, scan_profile, warning_messages)``; the profile is a list
    of ``(nu, log_bf)`` pairs on the scan grid.
    """
    lo, hi = float(nu_bounds[0]), float(nu_bounds[1])
    if not (0 <= lo < hi) or not np.isfinite(hi):
        raise DomainError(f"need 0 <= lo < hi, got {nu_bounds!r}")
    grid = scan_grid(lo, hi, n_scan)
    vals = np.array([log_bf(v) for v in grid])
    profile = list(zip(grid.tolist(), vals.tolist()))
    msgs = []
    if np.max(vals) - np.min(vals) <= 1e-12:
        msg = "Bayes factor profile is flat; returning lower bound"
        warnings.warn(msg, FlatProfileWarning, stacklevel=3)
        return lo, profile, [msg]
    i = int(np.argmax(vals))
    if i == len(grid) - 1:
        w = BoundaryMaximumWarning(hi)
        warnings.warn(w, stacklevel=3)
        return hi, profile, [str(w)]
    a = grid[max(i - 1, 0)]
    c = grid[i + 1]
    x, fx = _golden_max(log_bf, a, c, tolerance)
    if fx >= vals[i]:
        return float(x), profile, msgs
    return float(grid[i]), profile, msgs


def ess_cap(log_w1: np.ndarray, min_ess: float, nu_bounds) -> float:
    """Largest nu in ``nu_bounds`` whose tilted weights keep ESS >= ``min_ess``."""
    lo, hi = float(nu_bounds[0]), float(nu_bounds[1])
    lw1 = np.asarray(log_w1, dtype=float)
    target = math.log(min_ess)

    def f(log_nu):
        return log_ess(math.exp(log_nu) * lw1) - target

    if f(math.log(hi)) >= 0:
        return hi
    a = math.log(max(lo, hi * 1e-12))
    if f(a) < 0:
        return float(math.exp(a))
    return float(math.exp(scipy.optimize.brentq(f, a, math.log(hi), xtol=1e-10)))


def select_nu(
    post_wd: WeightedDraws,
    prior_wd: WeightedDraws,
    nu_bounds=(0.0, 1e3),
    tolerance: float = 1e-6,
    min_ess_fraction: float | None = None,
) -> NuSelection:
    """Choose nu maximizing the Monte Carlo Bayes factor of tilted vs base prior.

    With ``min_ess_fraction`` the upper bound is first lowered to the largest
    nu at which the posterior weights keep that fraction of their draws as
    effective sample size; beyond it the estimate is dominated by a handful
    of draws.
    """
    _check_pair(post_wd, prior_wd)
    # sorting fixes the summation order, so the profile ignores draw order
    lw_post = np.sort(post_wd.log_w1)
    lw_prior = np.sort(prior_wd.log_w1)
    lo, hi = float(nu_bounds[0]), float(nu_bounds[1])
    msgs = []
    if min_ess_fraction:
        cap = ess_cap(post_wd.log_w1, min_ess_fraction * post_wd.K, (lo, hi))
        if cap < hi:
            msgs.append(f"upper bound lowered from {hi:g} to {cap:.6g} to keep ESS >= {min_ess_fraction:g} K")
        if cap <= lo:
            lb = _log_bf(lw_post, lw_prior, lo)
            return NuSelection(lo, bayes_factor(post_wd, prior_wd, lo), [(lo, math.exp(min(lb, 700.0)))], [(lo, lb)], msgs)
        hi = cap
    nu_star, log_profile, more = maximize_log_bf(
        lambda v: _log_bf(lw_post, lw_prior, v), (lo, hi), tolerance
    )
    bf = bayes_factor(post_wd, prior_wd, nu_star)
    return NuSelection(
        nu_star,
        bf,
        [(v, math.exp(min(lb, 700.0))) for v, lb in log_profile],
        log_profile,
        msgs + more,
    )


def select_nu_gaussian(
    g: GaussianApprox,
    P: Projection,
    prior_wd: WeightedDraws,
    nu_bounds=(0.0, 1e3),
    tolerance: float = 1e-6,
    min_ess_fraction: float | None = None,
) -> NuSelection:
    """As :func:`select_nu`, with the numerator evaluated analytically from ``g``.

    Only the normalizer is a Monte Carlo estimate here, so ``min_ess_fraction``
    caps nu by the ESS of the prior draws' weights.
    """
    lw_prior = np.sort(prior_wd.log_w1)
    lo, hi = float(nu_bounds[0]), float(nu_bounds[1])
    msgs = []
    if min_ess_fraction:
        cap = ess_cap(lw_prior, min_ess_fraction * prior_wd.K, (lo, hi))
        if cap < hi:
            msgs.append(f"upper bound lowered from {hi:g} to {cap:.6g} to keep prior ESS >= {min_ess_fraction:g} K")
        if cap <= lo:
            return NuSelection(lo, bayes_factor_gaussian(g, P, prior_wd, lo), [], [], msgs)
        hi = cap

    def log_bf(v):
        if v == 0:
            return 0.0
        return log_bf_numerator_gaussian(g, P, v) - (logsumexp(v * lw_prior) - math.log(lw_prior.size))

    nu_star, log_profile, more = maximize_log_bf(log_bf, (lo, hi), tolerance)
    bf = bayes_factor_gaussian(g, P, prior_wd, nu_star)
    return NuSelection(
        nu_star, bf, [(v, math.exp(min(lb, 700.0))) for v, lb in log_profile], log_profile, msgs + more
    )


# ---------------------------------------------------------------------------
# normalizer surrogate over phi
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ZSurrogate:
    """Normalizer as a function of phi: a spline in log Z, or an exact table."""

    nu: float
    phi_grid: np.ndarray
    zhat_values: np.ndarray
    kind: str = "spline"
    coefficients: np.ndarray | None = None
    boundary: tuple[float, float] | None = None
    interior: np.ndarray | None = None
    fit_diagnostics: dict = field(default_factory=dict)

    def log_predict(self, phi):
        phi = np.asarray(phi, dtype=float)
        if self.kind == "table":
            idx = np.searchsorted(self.phi_grid, phi)
            idx = np.clip(idx, 0, self.phi_grid.size - 1)
            left = np.clip(idx - 1, 0, None)
            pick = np.where(
                np.abs(self.phi_grid[left] - phi) < np.abs(self.phi_grid[idx] - phi), left, idx
            )
            if not np.allclose(self.phi_grid[pick], phi, rtol=1e-12, atol=0):
                raise DomainError("phi is not on the tabulated grid")
            out = np.log(self.zhat_values[pick])
        elif self.coefficients is None:
            out = np.zeros_like(phi)
        else:
            X = ns_design(np.atleast_1d(phi), self.boundary, self.interior, intercept=True)
            out = (X @ self.coefficients).reshape(phi.shape)
        return np.clip(out, LOG_Z_FLOOR, 0.0)

    def predict(self, phi):
        return np.exp(self.log_predict(phi))

    __call__ = predict

    def to_dict(self) -> dict:
        return {
            "nu": self.nu,
            "kind": self.kind,
            "phi_grid": self.phi_grid.tolist(),
            "zhat_values": self.zhat_values.tolist(),
            "coefficients": None if self.coefficients is None else self.coefficients.tolist(),
            "boundary": None if self.boundary is None else list(self.boundary),
            "interior_knots": None if self.interior is None else self.interior.tolist(),
            "fit_diagnostics": self.fit_diagnostics,
        }


def log_z_grid(family: SubspaceFamily, prior_draws: DrawMatrix, nu: float, phis) -> np.ndarray:
    """log Z-hat at each phi, sharing one pass over the prior draws per phi."""
    if prior_draws.provenance is not Provenance.PRIOR:
        raise DomainError("normalizer estimation needs draws from the base prior")
    phis = np.asarray(phis, dtype=float)
    if nu == 0:
        return np.zeros(phis.size)
    X = prior_draws.draws
    sq = np.einsum("ij,ij->i", X, X)
    Q = orthonormal_range(np.stack([family.basis_matrix(v) for v in phis]))
    out = np.empty(phis.size)
    for s in range(phis.size):
        proj = X @ Q[s]
        resid = np.clip(sq - np.einsum("ij,ij->i", proj, proj), 0.0, None)
        out[s] = logsumexp(-0.5 * nu * resid) - math.log(X.shape[0])
    return np.minimum(out, 0.0)


def _fit_log_spline(phi, y, df):
    boundary = (float(phi[0]), float(phi[-1]))
    probs = np.linspace(0, 1, df)[1:-1]
    interior = np.quantile(phi, probs) if df > 2 else np.empty(0)
    X = ns_design(phi, boundary, interior, intercept=True)
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    return coef, boundary, interior


def zhat_spline_fit(
    family: SubspaceFamily,
    prior_draws: DrawMatrix,
    nu: float,
    grid_size: int = 25,
    df: int | None = None,
) -> ZSurrogate:
    """Fit a natural cubic spline to log Z-hat over a quantile grid in phi.

    The grid is ``grid_size`` prior quantiles at probabilities s/(S+1). ``df``
    (default ``max(4, S // 2)``) sets the spline's column count. The held-out
    diagnostic refits without every fourth grid point and reports the worst
    relative error on the omitted points. A family with a finite phi support
    gets an exact lookup table instead of a fit.
    """
    if family.is_discrete:
        phis = np.asarray(family.support.values, dtype=float)
        order = np.argsort(phis)
        phis = phis[order]
        lz = log_z_grid(family, prior_draws, nu, phis)
        return ZSurrogate(float(nu), phis, np.exp(lz), kind="table")
    if not isinstance(family.support, ContinuousSpec):
        raise DomainError("family support must be continuous for a spline fit")
    S = int(grid_size)
    if S < 8:
        raise DomainError("grid_size must be at least 8")
    df = df or max(4, S // 2)
    if not 2 <= df <= S:
        raise DomainError("df must lie in [2, grid_size]")
    phis = family.support.quantile_grid(S)
    lz = log_z_grid(family, prior_draws, nu, phis)
    zhat = np.exp(lz)
    if np.ptp(lz) == 0.0:
        coef = None if lz[0] == 0.0 else np.concatenate([[lz[0]], np.zeros(df - 1)])
        boundary, interior = (float(phis[0]), float(phis[-1])), np.quantile(phis, np.linspace(0, 1, df)[1:-1])
        diag = {"max_heldout_rel_error": 0.0, "df": df}
        return ZSurrogate(float(nu), phis, zhat, "spline", coef, boundary, interior, diag)
    coef, boundary, interior = _fit_log_spline(phis, lz, df)
    held = np.arange(S) % 4 == 3
    c2, b2, i2 = _fit_log_spline(phis[~held], lz[~held], min(df, int((~held).sum())))
    pred = ns_design(phis[held], b2, i2, intercept=True) @ c2
    err = np.abs(np.exp(np.clip(pred, LOG_Z_FLOOR, 0.0)) - zhat[held]) / zhat[held]
    fitted = ns_design(phis, boundary, interior, intercept=True) @ coef
    diag = {
        "max_heldout_rel_error": float(err.max()),
        "max_insample_rel_error": float(np.max(np.abs(np.exp(fitted) / zhat - 1.0))),
        "df": df,
    }
    return ZSurrogate(float(nu), phis, zhat, "spline", coef, boundary, interior, diag)
