"""Normal approximations to the base posterior and their exact tilt.

Normals are described by mean and *precision*. Tilting a normal with precision
``Omega`` by ``exp(-nu/2 theta'(I-P)theta)`` gives another normal with
precision ``Omega + nu (I - P)`` and mean ``(Omega + nu(I-P))^{-1} Omega m``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import (
    DimensionError,
    DomainError,
    InsufficientDrawsError,
    NotPositiveDefiniteError,
    SingularCovarianceError,
)
from .rng import as_generator
from .subspace import Projection
from .tilt import DrawMatrix, Provenance

RIDGE = 1e-8


def cholesky_lower(A: np.ndarray) -> np.ndarray:
    try:
        return np.linalg.cholesky(A)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError("matrix is not positive definite") from exc


@dataclass(frozen=True)
class GaussianApprox:
    """``N(m, Omega^{-1})``: posterior mode and precision."""

    m: np.ndarray
    omega: np.ndarray

    def __post_init__(self):
        m = np.array(self.m, dtype=float).ravel()
        om = np.array(self.omega, dtype=float)
        if om.shape != (m.size, m.size):
            raise DimensionError(f"precision shape {om.shape} does not match mean length {m.size}")
        if np.max(np.abs(om - om.T)) > 1e-10 * max(1.0, np.max(np.abs(om))):
            raise DomainError("precision matrix is not symmetric")
        om = 0.5 * (om + om.T)
        chol = cholesky_lower(om)
        for a in (m, om, chol):
            a.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "omega", om)
        object.__setattr__(self, "_chol", chol)

    @property
    def p(self) -> int:
        return self.m.size

    @property
    def chol(self) -> np.ndarray:
        """Lower Cholesky factor of the precision."""
        return self._chol

    def logdet_precision(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self._chol))))

    def covariance(self) -> np.ndarray:
        return scipy.linalg.cho_solve((self._chol, True), np.eye(self.p))

    def to_json(self) -> str:
        return json.dumps({"m": self.m.tolist(), "omega": self.omega.tolist()}, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "GaussianApprox":
        obj = json.loads(text)
        return cls(obj["m"], obj["omega"])


def tilt_gaussian(g: GaussianApprox, P: Projection, nu: float) -> GaussianApprox:
    if nu < 0 or not np.isfinite(nu):
        raise DomainError("nu must be finite and nonnegative")
    if P.dim != g.p:
        raise DimensionError("projection and approximation dimensions differ")
    omega_t = g.omega + nu * P.complement()
    L = cholesky_lower(0.5 * (omega_t + omega_t.T))
    m_t = scipy.linalg.cho_solve((L, True), g.omega @ g.m)
    return GaussianApprox(m_t, omega_t)


def sample_gaussian(
    g: GaussianApprox, K: int, seed, provenance: Provenance = Provenance.BASE_POSTERIOR
) -> DrawMatrix:
    """K draws by back-substitution through the precision's Cholesky factor."""
    rng = as_generator(seed, "sample_gaussian")
    z = rng.standard_normal((g.p, K))
    x = scipy.linalg.solve_triangular(g.chol, z, lower=True, trans="T")
    draws = (x + g.m[:, None]).T
    return DrawMatrix(draws, provenance, seed if isinstance(seed, int) else None)


def mode_hessian_from_draws(draws: DrawMatrix) -> GaussianApprox:
    """Moment-matched normal: sample mean and ridge-stabilized inverse covariance."""
    K, p = draws.draws.shape
    if K <= p + 1:
        raise InsufficientDrawsError(f"need more than p+1={p + 1} draws, got {K}")
    m = draws.draws.mean(axis=0)
    cov = np.atleast_2d(np.cov(draws.draws, rowvar=False))
    scale = np.trace(cov) / p
    if not scale > 0:
        raise SingularCovarianceError("draws have zero sample variance")
    cov = cov + RIDGE * scale * np.eye(p)
    try:
        L = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError("sample covariance is singular after ridge") from exc
    omega = scipy.linalg.cho_solve((L, True), np.eye(p))
    return GaussianApprox(m, 0.5 * (omega + omega.T))
