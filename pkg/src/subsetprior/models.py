"""Conjugate demonstration models and the simulation-study harness.

Normal distributions in this module follow the precision convention for
priors: ``mu | sigma2 ~ N(0, a / sigma2)`` means prior variance ``sigma2 / a``.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.stats

from .errors import DomainError, SubsetWarning
from .gaussian import GaussianApprox
from .rng import as_generator, stream
from .sampler_gibbs import gibbs_discrete
from .sampler_is import summarize, tilted_importance_sampler
from .subspace import (
    ContinuousSpec,
    Projection,
    block_projection,
    geometric_family,
    power_family,
    projection_from_basis,
)
from .tilt import DrawMatrix, Provenance

# ---------------------------------------------------------------------------
# one-way ANOVA with normal-inverse-gamma priors
# ---------------------------------------------------------------------------

ANOVA_MEANS = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0)
ANOVA_SCENARIOS = {
    "homo": (2.0,) * 6,
    "mild": (1.0, 1.6, 2.2, 2.8, 3.4, 4.0),
    "strong": (1.0, 3.0, 5.0, 7.0, 9.0, 11.0),
}


@dataclass(frozen=True)
class AnovaSpec:
    true_means: tuple[float, ...] = ANOVA_MEANS
    true_variances: tuple[float, ...] = ANOVA_SCENARIOS["homo"]
    n: int = 20
    a: float = 1.0
    b: float = 1.0
    c: float = 2.0

    def __post_init__(self):
        if len(self.true_means) != len(self.true_variances):
            raise DomainError("need one mean per variance")
        if min(self.true_variances) <= 0:
            raise DomainError("variances must be positive")
        if self.n < 2:
            raise DomainError("need at least two observations per group")

    @property
    def groups(self) -> int:
        return len(self.true_means)

    def columns(self) -> tuple[str, ...]:
        G = self.groups
        return tuple(f"mu_{g + 1}" for g in range(G)) + tuple(f"sigma2_{g + 1}" for g in range(G))


def simulate_anova(spec: AnovaSpec, rng) -> list[np.ndarray]:
    rng = as_generator(rng, "simulate_anova")
    return [
        rng.normal(m, math.sqrt(v), size=spec.n)
        for m, v in zip(spec.true_means, spec.true_variances)
    ]


def _group_stats(data):
    n = np.array([len(y) for y in data], dtype=float)
    ybar = np.array([np.mean(y) if len(y) else 0.0 for y in data])
    ss = np.array([np.sum((np.asarray(y) - yb) ** 2) if len(y) else 0.0 for y, yb in zip(data, ybar)])
    return n, ybar, ss


def anova_posterior_draws(spec: AnovaSpec, data, K: int, seed, pooled: bool = False) -> DrawMatrix:
    """Exact normal-inverse-gamma posterior draws of (mu_1..mu_G, sigma2_1..sigma2_G).

    ``pooled=True`` fits the homoscedastic model: one variance shared by all
    groups, repeated in each sigma2 column. Empty groups are allowed and fall
    back to the prior.
    """
    rng = as_generator(seed, "anova_posterior", int(pooled))
    n, ybar, ss = _group_stats(data)
    a, shape0, scale0 = spec.a, spec.b / 2.0, spec.c / 2.0
    an = a + n
    mun = n * ybar / an
    extra = ss + a * n * ybar**2 / an
    G = len(data)
    if pooled:
        sig = (scale0 + 0.5 * extra.sum()) / rng.gamma(shape0 + 0.5 * n.sum(), size=K)
        sig2 = np.repeat(sig[:, None], G, axis=1)
    else:
        sig2 = (scale0 + 0.5 * extra) / rng.gamma(shape0 + 0.5 * n, size=(K, G))
    mu = mun + np.sqrt(sig2 / an) * rng.standard_normal((K, G))
    prov = Provenance.BASE_POSTERIOR if n.sum() > 0 else Provenance.PRIOR
    return DrawMatrix(np.hstack([mu, sig2]), prov, seed if isinstance(seed, int) else None, spec.columns())


def anova_prior_draws(spec: AnovaSpec, K: int, seed) -> DrawMatrix:
    """Draws from the heteroscedastic base prior."""
    return anova_posterior_draws(spec, [np.empty(0)] * spec.groups, K, seed)


def anova_projection(groups: int) -> Projection:
    """Identity on the means, shrinkage of the variances toward equality."""
    return block_projection(groups, [projection_from_basis(np.ones((groups, 1)))])


# ---------------------------------------------------------------------------
# study bookkeeping
# ---------------------------------------------------------------------------


@dataclass
class MethodMetrics:
    ci_width: float
    coverage: float
    mse: float


@dataclass
class StudyResult:
    study: str
    scenario: str | None
    methods: dict[str, MethodMetrics]
    R: int
    K: int
    level: float
    seed: int
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "study": self.study,
            "scenario": self.scenario,
            "R": self.R,
            "K": self.K,
            "level": self.level,
            "seed": self.seed,
            "methods": {
                k: {"ci_width": m.ci_width, "coverage": m.coverage, "mse": m.mse}
                for k, m in self.methods.items()
            },
            "extras": self.extras,
        }

    def table_rows(self) -> list[list]:
        """Rows laid out like the published tables: metric by method."""
        names = list(self.methods)
        rows = [["metric", *names]]
        for label, attr in (("CI Width", "ci_width"), ("CI Coverage", "coverage"), ("MSE", "mse")):
            rows.append([label, *(getattr(self.methods[n], attr) for n in names)])
        return rows


def _interval_metrics(mean, lo, hi, truth):
    truth = np.asarray(truth)
    return (
        float(np.mean(hi - lo)),
        float(np.mean((lo <= truth) & (truth <= hi))),
        float(np.mean((mean - truth) ** 2)),
    )


def _aggregate(per_rep: list[dict]) -> dict[str, MethodMetrics]:
    names = per_rep[0].keys()
    return {
        n: MethodMetrics(*(float(np.mean([r[n][i] for r in per_rep])) for i in range(3)))
        for n in names
    }


def _run_reps(fn, R: int, threads: int):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SubsetWarning)
        if threads is None or threads <= 1:
            return [fn(r) for r in range(R)]
        with ThreadPoolExecutor(max_workers=threads) as ex:
            return list(ex.map(fn, range(R)))


DESK_SCALE = {"R": 200, "K": 10_000}
FULL_SCALE = {"R": 2000, "K": 50_000}


def run_anova_study(
    scenario: str,
    R: int = 200,
    K: int = 10_000,
    seed: int = 0,
    level: float = 0.95,
    nu_bounds=(0.0, 1e3),
    threads: int = 1,
    min_ess_fraction: float = 0.1,
) -> StudyResult:
    """Coverage, width and MSE for the six group variances under three fits.

    Methods: homoscedastic (pooled variance), heteroscedastic (independent
    variances), and SUBSET (heteroscedastic base prior tilted toward equal
    variances, nu chosen by Bayes factor).
    """
    if scenario not in ANOVA_SCENARIOS:
        raise DomainError(f"unknown scenario {scenario!r}")
    spec = AnovaSpec(true_variances=ANOVA_SCENARIOS[scenario])
    G = spec.groups
    P = anova_projection(G)
    truth = np.asarray(spec.true_variances)

    def one(r):
        s = int(stream(seed, "anova", scenario, r).integers(2**63))
        data = simulate_anova(spec, stream(s, "data"))
        homo = anova_posterior_draws(spec, data, K, stream(s, "homo"), pooled=True)
        het = anova_posterior_draws(spec, data, K, stream(s, "het"))
        prior = anova_prior_draws(spec, K, stream(s, "prior"))
        ts = tilted_importance_sampler(het, prior, P, nu_bounds, min_ess_fraction=min_ess_fraction)
        out = {}
        for name, obj in (("homoscedastic", homo), ("heteroscedastic", het), ("SUBSET", ts.weighted)):
            sm = summarize(obj, level)
            out[name] = _interval_metrics(sm.mean[G:], sm.lo[G:], sm.hi[G:], truth)
        out["_nu"] = (ts.nu_star, sm.ess)
        return out

    reps = _run_reps(one, R, threads)
    nus, esss = np.array([r.pop("_nu") for r in reps]).T
    extras = {
        "nu_star_median": float(np.median(nus)),
        "nu_star_at_upper_bound": float(np.mean(nus >= nu_bounds[1])),
        "subset_ess_median": float(np.median(esss)),
    }
    return StudyResult("anova", scenario, _aggregate(reps), R, K, level, seed, extras)


# ---------------------------------------------------------------------------
# ordinal covariate regression with a Zellner g prior
# ---------------------------------------------------------------------------

ORDINAL_TRUTH = tuple(0.005 * np.array([0.0, 1.0] + [float(k) ** 4 for k in range(2, 9)]))


@dataclass(frozen=True)
class ZellnerSpec:
    """Ordinal factor regression, ``y = X beta + e``.

    ``coding="treatment"`` (R's default contrasts) uses an intercept plus
    indicators of levels 2..L, so beta is (level-1 mean, differences from
    level 1); ``coding="cell"`` uses one indicator per level. The g prior is ``beta | sigma2 ~ N(0, g sigma2 (X'X)^{-1})`` in covariance
    form, with ``sigma2 ~ InvGamma(sigma2_shape, sigma2_rate)``; ``g`` defaults
    to the sample size.
    """

    true_coefficients: tuple[float, ...] = ORDINAL_TRUTH
    n_per_level: int = 5
    residual_sd: float = 1.0
    g: float | None = None
    sigma2_shape: float = 0.5
    sigma2_rate: float = 0.5
    coding: str = "treatment"

    def __post_init__(self):
        if self.coding not in ("treatment", "cell"):
            raise DomainError("coding must be 'treatment' or 'cell'")
        if self.g is not None and self.g <= 0:
            raise DomainError("g must be positive")
        if self.residual_sd < 0:
            raise DomainError("residual sd must be nonnegative")

    @property
    def levels(self) -> int:
        return len(self.true_coefficients)

    @property
    def n(self) -> int:
        return self.levels * self.n_per_level

    @property
    def g_value(self) -> float:
        return float(self.n if self.g is None else self.g)

    def design(self) -> np.ndarray:
        X = np.kron(np.eye(self.levels), np.ones((self.n_per_level, 1)))
        if self.coding == "treatment":
            X[:, 0] = 1.0
        return X

    def columns(self) -> tuple[str, ...]:
        return tuple(f"beta_{j + 1}" for j in range(self.levels))


def simulate_ordinal(spec: ZellnerSpec, rng) -> np.ndarray:
    rng = as_generator(rng, "simulate_ordinal")
    mean = spec.design() @ np.asarray(spec.true_coefficients)
    return mean + spec.residual_sd * rng.standard_normal(mean.size)


def zellner_posterior_draws(spec: ZellnerSpec, y, K: int, seed) -> DrawMatrix:
    rng = as_generator(seed, "zellner_posterior")
    X = spec.design()
    g = spec.g_value
    XtX = X.T @ X
    L = np.linalg.cholesky(XtX)
    bhat = np.linalg.solve(XtX, X.T @ y)
    sse = float(np.sum((y - X @ bhat) ** 2))
    rate = spec.sigma2_rate + 0.5 * (sse + float(bhat @ XtX @ bhat) / (1.0 + g))
    sig2 = rate / rng.gamma(spec.sigma2_shape + 0.5 * len(y), size=K)
    shrink = g / (1.0 + g)
    z = rng.standard_normal((K, spec.levels))
    noise = np.linalg.solve(L.T, z.T).T
    beta = shrink * bhat + np.sqrt(shrink * sig2)[:, None] * noise
    return DrawMatrix(beta, Provenance.BASE_POSTERIOR, seed if isinstance(seed, int) else None, spec.columns())


def zellner_prior_draws(spec: ZellnerSpec, K: int, seed) -> DrawMatrix:
    rng = as_generator(seed, "zellner_prior")
    X = spec.design()
    L = np.linalg.cholesky(X.T @ X)
    sig2 = spec.sigma2_rate / rng.gamma(spec.sigma2_shape, size=K)
    noise = np.linalg.solve(L.T, rng.standard_normal((K, spec.levels)).T).T
    beta = np.sqrt(spec.g_value * sig2)[:, None] * noise
    return DrawMatrix(beta, Provenance.PRIOR, seed if isinstance(seed, int) else None, spec.columns())


def ordinal_families(levels: int = 9, Q: int = 15):
    """Power (Gamma(2, 1) prior) and geometric (Beta(2, 2) prior) families on Q quantiles."""
    power = power_family(
        np.arange(1, levels + 1), ContinuousSpec(scipy.stats.gamma(2.0, scale=1.0), Q, "gamma:2,1")
    ).discrete(Q)
    geometric = geometric_family(levels, ContinuousSpec(scipy.stats.beta(2.0, 2.0), Q, "beta:2,2")).discrete(Q)
    # nu is chosen with phi held at the prior mode
    return {"power": (power, 1.0), "geometric": (geometric, 0.5)}


def run_ordinal_study(
    R: int = 200,
    K: int = 10_000,
    seed: int = 0,
    level: float = 0.95,
    nu_bounds=(0.0, 1e3),
    spec: ZellnerSpec | None = None,
    threads: int = 1,
    min_ess_fraction: float = 0.1,
) -> StudyResult:
    """Zellner g prior versus SUBSET priors toward power and geometric trends."""
    spec = spec or ZellnerSpec()
    truth = np.asarray(spec.true_coefficients)
    fams = ordinal_families(spec.levels)

    def one(r):
        s = int(stream(seed, "ordinal", r).integers(2**63))
        y = simulate_ordinal(spec, stream(s, "data"))
        post = zellner_posterior_draws(spec, y, K, stream(s, "post"))
        prior = zellner_prior_draws(spec, K, stream(s, "prior"))
        sm = summarize(post, level)
        out = {"Zellner": _interval_metrics(sm.mean, sm.lo, sm.hi, truth)}
        nus = {}
        for name, (fam, phi_mode) in fams.items():
            P = projection_from_basis(fam.basis(phi_mode))
            nu = tilted_importance_sampler(post, prior, P, nu_bounds, min_ess_fraction=min_ess_fraction).nu_star
            tr = gibbs_discrete(post, prior, fam, nu, K, seed=stream(s, "gibbs", name)).kept()
            st = summarize(tr.draws(), level)
            out[f"SUBSET-{name}"] = _interval_metrics(st.mean, st.lo, st.hi, truth)
            nus[name] = nu
        out["_nu"] = nus
        return out

    reps = _run_reps(one, R, threads)
    nus = [r.pop("_nu") for r in reps]
    extras = {f"nu_star_median_{k}": float(np.median([n[k] for n in nus])) for k in fams}
    return StudyResult("ordinal", None, _aggregate(reps), R, K, level, seed, extras)


# ---------------------------------------------------------------------------
# smaller conjugate models
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TwoBinomialSpec:
    n1: int
    n2: int
    p1: float = 0.5
    p2: float = 0.5

    def __post_init__(self):
        if not (0 < self.p1 < 1 and 0 < self.p2 < 1):
            raise DomainError("rates must lie in (0, 1)")
        if self.n1 < 0 or self.n2 < 0:
            raise DomainError("trial counts must be nonnegative")


def two_binomial_draws(spec: TwoBinomialSpec, data, K: int, seed) -> DrawMatrix:
    """Beta posterior draws of (p1, p2) under independent Jeffreys priors.

    ``data=None`` (or zero trials) returns prior draws.
    """
    rng = as_generator(seed, "two_binomial")
    if data is None:
        y, n = (0, 0), (0, 0)
    else:
        y, n = tuple(data), (spec.n1, spec.n2)
    if any(not 0 <= yi <= ni for yi, ni in zip(y, n)):
        raise DomainError("successes must lie between 0 and the number of trials")
    draws = np.column_stack([rng.beta(0.5 + yi, 0.5 + ni - yi, size=K) for yi, ni in zip(y, n)])
    prov = Provenance.PRIOR if sum(n) == 0 else Provenance.BASE_POSTERIOR
    return DrawMatrix(draws, prov, seed if isinstance(seed, int) else None, ("p_1", "p_2"))


@dataclass(frozen=True)
class NormalMeanSpec:
    """p-variate normal mean with known noise precision and prior ``N(0, tau I)``."""

    p: int = 3
    tau: float = 1.0
    noise_precision: float = 1.0
    n: int = 10


def normal_mean_posterior(spec: NormalMeanSpec, ybar) -> GaussianApprox:
    ybar = np.asarray(ybar, dtype=float)
    prec = spec.tau + spec.n * spec.noise_precision
    return GaussianApprox(spec.n * spec.noise_precision * ybar / prec, prec * np.eye(spec.p))


def normal_mean_prior(spec: NormalMeanSpec) -> GaussianApprox:
    return GaussianApprox(np.zeros(spec.p), spec.tau * np.eye(spec.p))


def normal_gamma_arm_draws(
    means, sds, ns, K: int, seed, a0: float = -5.0, b0: float = 1.0, c0: float = 3.0, d0: float = 75.0
) -> DrawMatrix:
    """Independent normal-gamma posteriors per arm from summary statistics.

    Prior: ``mu_k | tau_k ~ N(a0, b0 tau_k)`` (precision), ``tau_k ~ Gamma(c0/2,
    rate d0/2)``. Columns are (mu_1..mu_G, tau_1..tau_G); zero counts give
    prior draws.
    """
    rng = as_generator(seed, "normal_gamma_arms")
    means, sds, ns = (np.asarray(v, dtype=float) for v in (means, sds, ns))
    bn = b0 + ns
    an = (b0 * a0 + ns * means) / bn
    shape = c0 / 2 + ns / 2
    rate = d0 / 2 + 0.5 * (np.clip(ns - 1, 0, None) * sds**2 + b0 * ns * (means - a0) ** 2 / bn)
    G = means.size
    tau = rng.gamma(shape, 1.0 / rate, size=(K, G))
    mu = an + rng.standard_normal((K, G)) / np.sqrt(bn * tau)
    cols = tuple(f"mu_{k + 1}" for k in range(G)) + tuple(f"tau_{k + 1}" for k in range(G))
    prov = Provenance.PRIOR if ns.sum() == 0 else Provenance.BASE_POSTERIOR
    return DrawMatrix(np.hstack([mu, tau]), prov, seed if isinstance(seed, int) else None, cols)
