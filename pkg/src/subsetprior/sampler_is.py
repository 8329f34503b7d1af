"""Tilted importance sampling with a fixed subspace, resampling and summaries."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .errors import DegenerateWeightsError, DomainError, InsufficientDrawsError
from .evidence import BayesFactor, NuSelection, bayes_factor, select_nu
from .rng import as_generator
from .subspace import Projection
from .tilt import (
    DrawMatrix,
    Provenance,
    WeightedDraws,
    compute_log_w1,
    ess,
    normalized_weights,
    reweight,
)


class AliasTable:
    """Walker/Vose alias table: O(K) to build, O(1) per draw."""

    def __init__(self, weights):
        w = np.asarray(weights, dtype=float).ravel()
        if w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
            raise DegenerateWeightsError("alias weights must be finite and nonnegative")
        total = w.sum()
        if not total > 0:
            raise DegenerateWeightsError("alias weights sum to zero")
        n = w.size
        scaled = (w * (n / total)).tolist()
        prob = [1.0] * n
        alias = list(range(n))
        small = [i for i, s in enumerate(scaled) if s < 1.0]
        large = [i for i, s in enumerate(scaled) if s >= 1.0]
        while small and large:
            s = small.pop()
            g = large[-1]
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] = (scaled[g] + scaled[s]) - 1.0
            if scaled[g] < 1.0:
                small.append(large.pop())
        # leftovers are 1 up to rounding
        self.prob = np.array(prob)
        self.alias = np.array(alias, dtype=np.intp)
        self.n = n

    def sample(self, size: int, rng: np.random.Generator) -> np.ndarray:
        j = rng.integers(0, self.n, size=size)
        u = rng.random(size)
        return np.where(u < self.prob[j], j, self.alias[j])

    def pick(self, u_index: float, u_coin: float) -> int:
        """One draw from two uniforms; used inside sequential chains."""
        j = int(u_index * self.n)
        if j == self.n:
            j -= 1
        return j if u_coin < self.prob[j] else int(self.alias[j])

    def probabilities(self) -> np.ndarray:
        """The distribution encoded by the table, reconstructed exactly."""
        out = self.prob.copy()
        np.add.at(out, self.alias, 1.0 - self.prob)
        return out / self.n


def resample(wd: WeightedDraws, K_out: int, seed) -> DrawMatrix:
    """Multinomial resampling of the weighted atoms via an alias table."""
    w = normalized_weights(wd)
    table = AliasTable(w)
    rng = as_generator(seed, "resample")
    idx = table.sample(int(K_out), rng)
    return DrawMatrix(
        wd.base.draws[idx],
        Provenance.TILTED_POSTERIOR,
        seed if isinstance(seed, int) else None,
        wd.base.columns,
    )


def weighted_quantile(values: np.ndarray, weights: np.ndarray, probs) -> np.ndarray:
    """Left-continuous inverse of the weighted ECDF, no interpolation."""
    order = np.argsort(values, kind="stable")
    v = values[order]
    cum = np.cumsum(weights[order])
    cum /= cum[-1]
    idx = np.searchsorted(cum, np.asarray(probs, dtype=float), side="left")
    return v[np.clip(idx, 0, v.size - 1)]


def monotone_probe(direction: str = "decreasing", coords=None) -> Callable[[np.ndarray], np.ndarray]:
    """Indicator that the selected coordinates are strictly monotone."""
    if direction not in ("increasing", "decreasing"):
        raise DomainError("direction must be 'increasing' or 'decreasing'")

    def probe(draws: np.ndarray) -> np.ndarray:
        x = draws if coords is None else draws[:, list(coords)]
        d = np.diff(x, axis=1)
        return np.all(d < 0, axis=1) if direction == "decreasing" else np.all(d > 0, axis=1)

    probe.__name__ = f"monotone_{direction}"
    return probe


def parse_probe(text: str):
    """``monotone:decreasing`` or ``monotone:increasing[:i,j,k]``."""
    parts = text.split(":")
    if parts[0] != "monotone" or len(parts) < 2:
        raise DomainError(f"unknown probe {text!r}")
    coords = [int(c) for c in parts[2].split(",")] if len(parts) > 2 else None
    return monotone_probe(parts[1], coords)


@dataclass
class PosteriorSummary:
    columns: tuple[str, ...]
    mean: np.ndarray
    sd: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    mean_se: np.ndarray
    level: float
    ess: float
    nu: float
    functionals: dict[str, tuple[float, float]] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "nu": self.nu,
            "ess": self.ess,
            "level": self.level,
            "coordinates": [
                {
                    "name": c,
                    "mean": float(self.mean[j]),
                    "sd": float(self.sd[j]),
                    "mean_se": float(self.mean_se[j]),
                    "ci": [float(self.lo[j]), float(self.hi[j])],
                }
                for j, c in enumerate(self.columns)
            ],
            "functionals": {k: {"value": v, "se": s} for k, (v, s) in self.functionals.items()},
        }


def summarize(
    wd: WeightedDraws | DrawMatrix,
    level: float = 0.95,
    probes: Mapping[str, Callable] | None = None,
) -> PosteriorSummary:
    """Weighted means, sds, equal-tailed credible intervals and probe probabilities."""
    if isinstance(wd, DrawMatrix):
        wd = WeightedDraws(wd, np.zeros(wd.K), 0.0)
    if wd.K < 2:
        raise InsufficientDrawsError("need at least two draws to summarize")
    if not 0 < level < 1:
        raise DomainError("level must be in (0, 1)")
    X = wd.base.draws
    w = normalized_weights(wd) if wd.nu != 0 else np.full(wd.K, 1.0 / wd.K)
    mean = w @ X
    dev = X - mean
    sd = np.sqrt(np.clip(w @ dev**2, 0.0, None))
    mean_se = np.sqrt((w**2) @ dev**2)
    a = (1.0 - level) / 2.0
    lo = np.empty(X.shape[1])
    hi = np.empty(X.shape[1])
    for j in range(X.shape[1]):
        lo[j], hi[j] = weighted_quantile(X[:, j], w, [a, 1.0 - a])
    funcs = {}
    for name, probe in (probes or {}).items():
        ind = np.asarray(probe(X), dtype=float)
        val = float(w @ ind)
        funcs[name] = (val, float(np.sqrt((w**2) @ (ind - val) ** 2)))
    return PosteriorSummary(wd.base.columns, mean, sd, lo, hi, mean_se, level, ess(wd), wd.nu, funcs)


def weighted_correlation(wd: WeightedDraws, i: int, j: int) -> tuple[float, float]:
    """Self-normalized estimate of Corr(theta_i, theta_j) and its standard error.

    The error linearizes the correlation through its influence function.
    """
    w = normalized_weights(wd)
    x = wd.base.draws[:, i]
    y = wd.base.draws[:, j]
    dx = x - w @ x
    dy = y - w @ y
    sx = np.sqrt(w @ dx**2)
    sy = np.sqrt(w @ dy**2)
    zx, zy = dx / sx, dy / sy
    r = float(w @ (zx * zy))
    infl = zx * zy - 0.5 * r * (zx**2 + zy**2)
    return r, float(np.sqrt((w**2) @ infl**2))


@dataclass
class TiltedSample:
    weighted: WeightedDraws
    nu_star: float
    bf: BayesFactor
    selection: NuSelection | None = None
    prior_weighted: WeightedDraws | None = None


def tilted_importance_sampler(
    post_draws: DrawMatrix,
    prior_draws: DrawMatrix,
    P: Projection,
    nu_bounds=(0.0, 1e3),
    nu: float | None = None,
    tolerance: float = 1e-6,
    min_ess_fraction: float | None = None,
) -> TiltedSample:
    """Reweight base-posterior draws toward the subspace.

    Log-weights at nu=1 are computed once for both draw sets. Unless ``nu`` is
    fixed, the tilting strength maximizes the Bayes factor within
    ``nu_bounds``; the posterior draws are returned carrying weights at that
    strength.
    """
    if post_draws.provenance is Provenance.PRIOR:
        raise DomainError("posterior draws are tagged as prior draws")
    if prior_draws.provenance is not Provenance.PRIOR:
        raise DomainError("prior draws must be tagged as prior draws")
    post = WeightedDraws(post_draws, compute_log_w1(post_draws, P), 1.0)
    prior = WeightedDraws(prior_draws, compute_log_w1(prior_draws, P), 1.0)
    selection = None
    if nu is None:
        selection = select_nu(post, prior, nu_bounds, tolerance, min_ess_fraction)
        nu = selection.nu_star
        bf = selection.bf_at_star
    else:
        bf = bayes_factor(post, prior, nu)
    return TiltedSample(reweight(post, nu), float(nu), bf, selection, reweight(prior, nu))
