"""Linear subspaces, their projection matrices, and parameterized families.

A subspace is given by a basis ``L`` (p x q, full column rank); shrinkage acts
through the residual quadratic form ``theta' (I - P) theta`` where ``P`` is the
orthogonal projection onto ``span(L)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
import scipy.linalg
import scipy.optimize
import scipy.stats

from .errors import DimensionError, DomainError, RankDeficiencyError

RANK_RTOL = 1e-10
SYMMETRY_TOL = 1e-10
IDEMPOTENCE_TOL = 1e-8
TRACE_TOL = 1e-8


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Basis:
    """Columns spanning a subspace of R^p.

    Full column rank is not enforced here; it is checked when a projection is
    formed, so a degenerate member of a family fails where it is used.
    """

    matrix: np.ndarray
    labels: tuple[str, ...] | None = None

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim == 1:
            m = m[:, None]
        if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
            raise DimensionError(f"basis must be a non-empty 2-D matrix, got shape {m.shape}")
        if m.shape[1] > m.shape[0]:
            raise DimensionError(f"basis has more columns ({m.shape[1]}) than rows ({m.shape[0]})")
        if not np.all(np.isfinite(m)):
            raise DomainError("basis entries must be finite")
        if self.labels is not None:
            labels = tuple(str(s) for s in self.labels)
            if len(labels) != m.shape[0]:
                raise DimensionError("need one label per basis row")
            object.__setattr__(self, "labels", labels)
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @property
    def p(self) -> int:
        return self.matrix.shape[0]

    @property
    def q(self) -> int:
        return self.matrix.shape[1]

    def rank(self) -> int:
        return _pivoted_qr(self.matrix)[1]


@dataclass(frozen=True)
class Projection:
    """Orthogonal projection matrix onto a q-dimensional subspace of R^p."""

    matrix: np.ndarray
    subspace_dim: int
    # orthonormal basis of the range, kept for fast quadratic forms
    range_basis: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionError(f"projection must be square, got shape {m.shape}")
        if np.max(np.abs(m - m.T)) > SYMMETRY_TOL:
            raise DomainError("projection matrix is not symmetric")
        if np.max(np.abs(m @ m - m)) > IDEMPOTENCE_TOL:
            raise DomainError("projection matrix is not idempotent")
        if abs(np.trace(m) - self.subspace_dim) > TRACE_TOL:
            raise DomainError(
                f"trace {np.trace(m):.12g} does not match subspace dimension {self.subspace_dim}"
            )
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)
        if self.range_basis is not None:
            object.__setattr__(self, "range_basis", _frozen(self.range_basis))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    @classmethod
    def from_matrix(cls, matrix) -> "Projection":
        """Wrap a user-supplied projection, inferring q from its trace."""
        m = np.asarray(matrix, dtype=float)
        return cls(m, int(round(float(np.trace(m)))))

    @classmethod
    def identity(cls, p: int) -> "Projection":
        return cls(np.eye(p), p, np.eye(p))

    def complement(self) -> np.ndarray:
        """``I - P`` as a fresh array."""
        return np.eye(self.dim) - self.matrix


def _unit_columns(L: np.ndarray) -> np.ndarray:
    # the span ignores column scale; without this, a column like 9**phi for
    # large phi would make the constant column look numerically negligible
    n = np.linalg.norm(L, axis=-2, keepdims=True)
    return np.divide(L, n, out=np.zeros_like(L), where=n > 0)


def _pivoted_qr(L: np.ndarray):
    L = _unit_columns(L)
    Q, R, _ = scipy.linalg.qr(L, mode="economic", pivoting=True)
    norm = np.linalg.norm(L, 2)
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > RANK_RTOL * norm)) if norm > 0 else 0
    return Q, rank


def projection_from_basis(basis: Basis | np.ndarray) -> Projection:
    """Projection onto ``span(basis)``, ``L (L'L)^{-1} L'``, formed from a QR factor."""
    if not isinstance(basis, Basis):
        basis = Basis(basis)
    Q, rank = _pivoted_qr(basis.matrix)
    if rank < basis.q:
        raise RankDeficiencyError(rank, basis.q)
    P = Q @ Q.T
    P = 0.5 * (P + P.T)
    return Projection(P, basis.q, Q)


def orthonormal_range(stack: np.ndarray) -> np.ndarray:
    """Batched orthonormal bases for a (n, p, q) stack of basis matrices.

    Columns are rescaled to unit length first; rank is then checked per
    member against the same relative tolerance as :func:`projection_from_basis`.
    """
    stack = _unit_columns(np.asarray(stack, dtype=float))
    Q, R = np.linalg.qr(stack)
    diag = np.abs(np.diagonal(R, axis1=-2, axis2=-1))
    norms = np.linalg.norm(stack, ord=2, axis=(-2, -1))
    bad = np.any(diag <= RANK_RTOL * norms[:, None], axis=-1)
    if np.any(bad):
        i = int(np.argmax(bad))
        raise RankDeficiencyError(int(np.sum(diag[i] > RANK_RTOL * norms[i])), stack.shape[-1])
    return Q


def block_projection(identity_dim: int, blocks: Sequence[Projection]) -> Projection:
    """Block-diagonal projection: identity on the first ``identity_dim`` coordinates.

    Coordinates under the identity block are left untilted.
    """
    if identity_dim < 0:
        raise DomainError("identity_dim must be nonnegative")
    parts = [np.eye(identity_dim)] if identity_dim else []
    parts += [b.matrix for b in blocks]
    if not parts:
        raise DimensionError("block projection needs at least one coordinate")
    ranges = [np.eye(identity_dim)] if identity_dim else []
    for b in blocks:
        ranges.append(b.range_basis if b.range_basis is not None else _range_of(b))
    P = scipy.linalg.block_diag(*parts)
    Q = scipy.linalg.block_diag(*ranges)
    return Projection(P, identity_dim + sum(b.subspace_dim for b in blocks), Q)


def _range_of(P: Projection) -> np.ndarray:
    w, v = np.linalg.eigh(P.matrix)
    return v[:, w > 0.5]


def residual_quadform(theta, P: Projection):
    """``theta' (I - P) theta`` for one vector or for each row of a matrix."""
    theta = np.asarray(theta, dtype=float)
    if theta.shape[-1] != P.dim:
        raise DimensionError(f"theta has dimension {theta.shape[-1]}, projection has {P.dim}")
    r = theta - theta @ P.matrix
    return np.einsum("...i,...i->...", r, r)


# ---------------------------------------------------------------------------
# basis generators
# ---------------------------------------------------------------------------


def power_basis(phi: float, levels, mode: str = "power") -> Basis:
    """Intercept plus ``levels ** phi``.

    ``mode="power"`` expects positive ordinal indices (1, 2, ..., 9);
    ``mode="dose"`` expects dose fractions such as (0, 1/4, 1/3, 1/2), where a
    zero (placebo) dose contributes nothing to the power-law column.
    """
    if not np.isfinite(phi) or phi <= 0:
        raise DomainError(f"phi must be positive, got {phi!r}")
    levels = np.asarray(levels, dtype=float)
    if mode == "power":
        if np.any(levels <= 0):
            raise DomainError("power mode requires positive levels")
        col = levels**phi
    elif mode == "dose":
        if np.any(levels < 0):
            raise DomainError("doses must be nonnegative")
        col = np.zeros_like(levels)
        pos = levels > 0
        col[pos] = 1.0 / (1.0 / levels[pos]) ** phi
    else:
        raise DomainError(f"unknown power-basis mode {mode!r}")
    return Basis(np.column_stack([np.ones_like(levels), col]))


def geometric_basis(phi: float, depth: int) -> Basis:
    """Intercept plus the geometric sequence ``phi^-1, ..., phi^-depth``."""
    if phi == 0 or not np.isfinite(phi):
        raise DomainError("phi must be finite and nonzero")
    if depth < 1:
        raise DomainError("depth must be at least 1")
    k = np.arange(1, depth + 1, dtype=float)
    return Basis(np.column_stack([np.ones(depth), float(phi) ** -k]))


def ratio_basis(phi: float) -> Basis:
    """The ray ``span((phi, 1)')``: first rate ``phi`` times the second."""
    if not np.isfinite(phi) or phi <= 0:
        raise DomainError("phi must be positive")
    return Basis(np.array([[float(phi)], [1.0]]))


def spline_knots(points, df: int, intercept: bool = False):
    """Boundary and interior knots for an ``df``-column natural cubic spline."""
    x = np.asarray(points, dtype=float)
    n_interior = df - 1 - int(intercept)
    if n_interior < 0:
        raise DomainError("df too small for the requested intercept setting")
    probs = np.linspace(0.0, 1.0, n_interior + 2)[1:-1]
    interior = np.quantile(x, probs) if n_interior else np.empty(0)
    return (float(x.min()), float(x.max())), interior


def ns_design(x, boundary, interior, intercept: bool = False) -> np.ndarray:
    """Natural cubic spline design matrix at ``x`` for fixed knots.

    Built from the truncated-power representation, which is linear outside
    the boundary knots. Without an intercept the columns span the natural
    splines vanishing at the left boundary knot.
    """
    x = np.asarray(x, dtype=float)
    lo, hi = boundary
    scale = hi - lo
    if scale <= 0:
        raise DomainError("boundary knots must be distinct")
    knots = (np.concatenate([[lo], np.sort(interior), [hi]]) - lo) / scale
    u = (x - lo) / scale
    K = len(knots)

    def d(k):
        return (
            np.clip(u - knots[k], 0, None) ** 3 - np.clip(u - knots[-1], 0, None) ** 3
        ) / (knots[-1] - knots[k])

    cols = [np.ones_like(u), u] if intercept else [u]
    dlast = d(K - 2)
    for k in range(K - 2):
        cols.append(d(k) - dlast)
    return np.column_stack(cols)


def natural_cubic_spline_basis(points, df: int, intercept: bool = False) -> Basis:
    """Natural cubic spline basis with ``df`` columns evaluated at ``points``.

    With ``intercept=False`` there are ``df - 1`` interior knots at evenly
    spaced quantiles of ``points`` (so df=4 gives 3 interior knots). With
    ``intercept=True`` one interior knot is traded for the constant column; df=2
    then spans {1, x}.
    """
    x = np.asarray(points, dtype=float)
    if x.ndim != 1 or np.any(np.diff(x) <= 0):
        raise DomainError("points must be a strictly increasing vector")
    if df < 2:
        raise DomainError("df must be at least 2")
    if df >= len(x):
        raise DomainError(f"df={df} must be smaller than the number of points ({len(x)})")
    boundary, interior = spline_knots(x, df, intercept)
    return Basis(ns_design(x, boundary, interior, intercept))


# ---------------------------------------------------------------------------
# families over phi
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DiscreteGrid:
    values: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        m = np.asarray(self.masses, dtype=float).ravel()
        if v.size == 0 or v.shape != m.shape:
            raise DimensionError("grid values and masses must be non-empty and aligned")
        if np.any(m <= 0):
            raise DomainError("grid masses must be positive")
        if abs(m.sum() - 1.0) > 1e-12:
            raise DomainError(f"grid masses sum to {m.sum():.15g}, not 1")
        object.__setattr__(self, "values", _frozen(v))
        object.__setattr__(self, "masses", _frozen(m))

    @classmethod
    def from_weights(cls, values, weights) -> "DiscreteGrid":
        w = np.asarray(weights, dtype=float)
        return cls(values, w / w.sum())

    def __len__(self):
        return self.values.size

    def mode(self) -> float:
        return float(self.values[int(np.argmax(self.masses))])


@dataclass(frozen=True)
class ContinuousSpec:
    """A continuous prior over phi, backed by a frozen scipy distribution."""

    dist: object
    Q: int = 15
    name: str = ""

    def density(self, phi):
        return self.dist.pdf(phi)

    def log_density(self, phi):
        return self.dist.logpdf(phi)

    def quantile(self, u):
        return self.dist.ppf(u)

    def sample(self, size, rng: np.random.Generator):
        return self.dist.ppf(rng.random(size))

    def quantile_grid(self, n: int) -> np.ndarray:
        return self.quantile(np.arange(1, n + 1) / (n + 1))

    def discretize(self, Q: int | None = None, weighting: str = "density") -> DiscreteGrid:
        """Grid of ``Q`` quantiles at probabilities q/(Q+1).

        ``weighting="density"`` sets masses proportional to the density at
        each quantile; ``"uniform"`` gives equal masses.
        """
        Q = Q or self.Q
        values = self.quantile_grid(Q)
        if weighting == "density":
            w = self.density(values)
        elif weighting == "uniform":
            w = np.ones(Q)
        else:
            raise DomainError(f"unknown weighting {weighting!r}")
        return DiscreteGrid.from_weights(values, w)

    def mode(self) -> float:
        lo, hi = self.quantile(1e-6), self.quantile(1 - 1e-6)
        res = scipy.optimize.minimize_scalar(
            lambda t: -self.log_density(t), bounds=(lo, hi), method="bounded",
            options={"xatol": 1e-10 * max(1.0, abs(hi))},
        )
        return float(res.x)


class SubspaceFamily:
    """Map ``phi -> Basis`` together with a prior over ``phi``."""

    def __init__(self, generator: Callable[[float], Basis | np.ndarray], support, name: str = ""):
        if not isinstance(support, (DiscreteGrid, ContinuousSpec)):
            raise TypeError("support must be a DiscreteGrid or ContinuousSpec")
        self._generator = generator
        self.support = support
        self.name = name
        self._cache = lru_cache(maxsize=4096)(self._projection)

    @property
    def is_discrete(self) -> bool:
        return isinstance(self.support, DiscreteGrid)

    def basis_matrix(self, phi: float) -> np.ndarray:
        b = self._generator(float(phi))
        return b.matrix if isinstance(b, Basis) else np.asarray(b, dtype=float)

    def basis(self, phi: float) -> Basis:
        b = self._generator(float(phi))
        return b if isinstance(b, Basis) else Basis(b)

    def _projection(self, phi: float) -> Projection:
        return projection_from_basis(self.basis(phi))

    def projection(self, phi: float) -> Projection:
        return self._cache(float(phi))

    @property
    def dim(self) -> int:
        return self.basis_matrix(self.prior_mode()).shape[0]

    def prior_mode(self) -> float:
        return self.support.mode()

    def discrete(self, Q: int | None = None, weighting: str = "density") -> "SubspaceFamily":
        """This family restricted to a finite grid over phi."""
        if self.is_discrete:
            return self
        return SubspaceFamily(self._generator, self.support.discretize(Q, weighting), self.name)

    def with_support(self, support) -> "SubspaceFamily":
        return SubspaceFamily(self._generator, support, self.name)


def power_family(levels, support, mode: str = "power") -> SubspaceFamily:
    levels = np.asarray(levels, dtype=float)
    return SubspaceFamily(lambda phi: power_basis(phi, levels, mode), support, f"{mode}")


def geometric_family(depth: int, support) -> SubspaceFamily:
    return SubspaceFamily(lambda phi: geometric_basis(phi, depth), support, "geometric")


def ratio_family(support) -> SubspaceFamily:
    return SubspaceFamily(ratio_basis, support, "ratio")


def constant_family(basis: Basis, support) -> SubspaceFamily:
    """A family whose subspace does not depend on phi."""
    return SubspaceFamily(lambda phi: basis, support, "constant")


_PRIORS = {
    "gamma": lambda a, rate: scipy.stats.gamma(a, scale=1.0 / rate),
    "beta": lambda a, b: scipy.stats.beta(a, b),
    "lognormal": lambda mu, sigma: scipy.stats.lognorm(sigma, scale=np.exp(mu)),
    "uniform": lambda lo, hi: scipy.stats.uniform(lo, hi - lo),
}


def parse_phi_prior(text: str, table_loader=None):
    """Parse ``name:params[:Q=n]`` into a prior over phi.

    Continuous names: ``gamma:shape,rate``, ``beta:a,b``,
    ``lognormal:meanlog,sdlog``, ``uniform:lo,hi``. ``table:<csv>`` reads a
    two-column (phi, mass) file into a :class:`DiscreteGrid`.
    """
    parts = text.split(":")
    name = parts[0].strip().lower()
    if name == "table":
        if len(parts) < 2:
            raise DomainError("table prior needs a path: table:<csv>")
        path = ":".join(parts[1:])
        if table_loader is None:
            from .io import load_phi_table as table_loader
        values, masses = table_loader(path)
        return DiscreteGrid.from_weights(values, masses)
    if name not in _PRIORS:
        raise DomainError(f"unknown phi prior {name!r}; expected one of {sorted(_PRIORS)} or table")
    if len(parts) < 2:
        raise DomainError(f"prior {name!r} needs parameters")
    try:
        params = [float(s) for s in parts[1].split(",")]
    except ValueError as exc:
        raise DomainError(f"bad prior parameters in {text!r}") from exc
    if len(params) != 2:
        raise DomainError(f"prior {name!r} takes two parameters")
    Q = 15
    for extra in parts[2:]:
        key, _, val = extra.partition("=")
        if key.strip().upper() != "Q":
            raise DomainError(f"unknown prior option {extra!r}")
        Q = int(val)
        if Q < 1:
            raise DomainError("Q must be positive")
    return ContinuousSpec(_PRIORS[name](*params), Q, text)
