"""Exponential-tilting weights for a fixed subspace.

Log-weights are computed once at nu = 1, ``-1/2 theta'(I - P)theta``, and every
other tilting strength is a rescaling of that vector. All normalization happens
in log space.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateWeightsError, DimensionError, DomainError
from .subspace import Projection, residual_quadform


class Provenance(str, enum.Enum):
    PRIOR = "prior"
    BASE_POSTERIOR = "base-posterior"
    TILTED_POSTERIOR = "tilted-posterior"


@dataclass(frozen=True)
class DrawMatrix:
    """K draws of a p-dimensional parameter, one per row."""

    draws: np.ndarray
    provenance: Provenance
    seed: int | None = None
    columns: tuple[str, ...] | None = None

    def __post_init__(self):
        d = np.array(self.draws, dtype=float)
        if d.ndim == 1:
            d = d[:, None]
        if d.ndim != 2 or d.shape[0] < 1 or d.shape[1] < 1:
            raise DimensionError(f"draws must be a non-empty K x p matrix, got {d.shape}")
        if not np.all(np.isfinite(d)):
            raise DomainError("draws must be finite")
        d.setflags(write=False)
        object.__setattr__(self, "draws", d)
        object.__setattr__(self, "provenance", Provenance(self.provenance))
        if self.columns is None:
            object.__setattr__(self, "columns", tuple(f"theta_{j + 1}" for j in range(d.shape[1])))
        elif len(self.columns) != d.shape[1]:
            raise DimensionError("need one column name per coordinate")
        else:
            object.__setattr__(self, "columns", tuple(self.columns))

    @property
    def K(self) -> int:
        return self.draws.shape[0]

    @property
    def p(self) -> int:
        return self.draws.shape[1]

    def __len__(self):
        return self.K


@dataclass(frozen=True)
class WeightedDraws:
    base: DrawMatrix
    log_w1: np.ndarray
    nu: float = 1.0
    log_w: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        lw1 = np.array(self.log_w1, dtype=float).ravel()
        if lw1.shape[0] != self.base.K:
            raise DimensionError("need one log-weight per draw")
        if np.any(lw1 > 0):
            raise DomainError("log-weights at nu=1 must be nonpositive")
        nu = float(self.nu)
        if not np.isfinite(nu) or nu < 0:
            raise DomainError(f"nu must be finite and nonnegative, got {self.nu!r}")
        lw1.setflags(write=False)
        lw = nu * lw1
        lw.setflags(write=False)
        object.__setattr__(self, "log_w1", lw1)
        object.__setattr__(self, "nu", nu)
        object.__setattr__(self, "log_w", lw)

    @property
    def K(self) -> int:
        return self.base.K


def compute_log_w1(draws: DrawMatrix, P: Projection) -> np.ndarray:
    """Per-draw log-weight at nu = 1."""
    if draws.p != P.dim:
        raise DimensionError(f"draws have dimension {draws.p}, projection has {P.dim}")
    return -0.5 * residual_quadform(draws.draws, P)


def weight(draws: DrawMatrix, P: Projection, nu: float = 1.0) -> WeightedDraws:
    return WeightedDraws(draws, compute_log_w1(draws, P), nu)


def reweight(wd: WeightedDraws, nu_new: float) -> WeightedDraws:
    if not np.isfinite(nu_new) or nu_new < 0:
        raise DomainError(f"nu must be finite and nonnegative, got {nu_new!r}")
    return WeightedDraws(wd.base, wd.log_w1, nu_new)


def normalized_weights(wd: WeightedDraws | np.ndarray) -> np.ndarray:
    """Softmax of the log-weights."""
    lw = wd.log_w if isinstance(wd, WeightedDraws) else np.asarray(wd, dtype=float)
    if not np.any(np.isfinite(lw)):
        raise DegenerateWeightsError("all log-weights are -inf")
    w = np.exp(lw - logsumexp(lw))
    return w / w.sum()


def log_ess(lw: np.ndarray) -> float:
    if not np.any(np.isfinite(lw)):
        raise DegenerateWeightsError("all log-weights are -inf")
    return float(2.0 * logsumexp(lw) - logsumexp(2.0 * lw))


def ess(wd: WeightedDraws | np.ndarray) -> float:
    """Effective sample size ``(sum w)^2 / sum w^2``."""
    lw = wd.log_w if isinstance(wd, WeightedDraws) else np.asarray(wd, dtype=float)
    if isinstance(wd, WeightedDraws) and wd.nu == 0.0:
        return float(wd.K)
    return float(min(np.exp(log_ess(lw)), lw.size))
