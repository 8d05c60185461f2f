"""Structured covariance models, their scalar functionals, and Gaussian sampling.

Conventions used throughout the package:

* The null hypothesis is ``Sigma = I``. Testing against a general ``Sigma_0``
  is a one-line user step (whiten the data with ``Sigma_0^{-1/2}`` first);
  nothing here re-implements that transform.
* The population mean is known to be zero. No function centers the data.
* A data matrix is a plain ``(n, p)`` float ndarray with one sample per row.

Each model materializes a dense symmetric ``p x p`` matrix via ``build()``.
Matrices are constructed symmetric entry by entry, never symmetrized after
the fact, so ``build()`` output satisfies ``M == M.T`` exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, NotPositiveSemiDefinite, ParameterOutOfRange

__all__ = [
    "CovarianceModel",
    "Identity",
    "EquiCorrelation",
    "Tridiagonal",
    "RankOneSpike",
    "LeastFavorable",
    "Dense",
    "build",
    "frobenius_distance_to_identity",
    "spectral_distance_to_identity",
    "trace_power",
    "factorize",
    "sample",
]

# Relative eigenvalue tolerance below which a matrix is declared not PSD.
_PSD_RTOL = 1e-10


def _check_dimension(p: int) -> int:
    if not isinstance(p, (int, np.integer)) or p < 1:
        raise ParameterOutOfRange(f"dimension p must be a positive integer, got {p!r}")
    return int(p)


@dataclass(frozen=True)
class CovarianceModel:
    """Base class: a symbolic description of a structured covariance matrix."""

    p: int

    #: short lowercase tag used in CSV output and manifests
    kind: str = field(default="abstract", init=False, repr=False)

    def __post_init__(self) -> None:
        _check_dimension(self.p)

    def build(self) -> np.ndarray:
        """Materialize the dense symmetric ``p x p`` matrix."""
        raise NotImplementedError


@dataclass(frozen=True)
class Identity(CovarianceModel):
    """The null model ``Sigma = I``."""

    kind = "identity"

    def build(self) -> np.ndarray:
        return np.eye(self.p)


@dataclass(frozen=True)
class EquiCorrelation(CovarianceModel):
    """Unit diagonal with constant off-diagonal correlation ``rho``.

    Positive definiteness requires ``rho`` in ``(-1/(p-1), 1)``; that range is
    enforced at construction.
    """

    rho: float = 0.0
    kind = "equicorr"

    def __post_init__(self) -> None:
        super().__post_init__()
        lo = -1.0 / (self.p - 1) if self.p > 1 else -1.0
        if not (lo < self.rho < 1.0):
            raise ParameterOutOfRange(
                f"equi-correlation rho must lie in ({lo:.6g}, 1), got {self.rho}"
            )

    def build(self) -> np.ndarray:
        m = np.full((self.p, self.p), float(self.rho))
        np.fill_diagonal(m, 1.0)
        return m


@dataclass(frozen=True)
class Tridiagonal(CovarianceModel):
    """Unit diagonal with correlation ``rho`` on the first off-diagonals.

    ``|rho| < 1/2`` is a sufficient condition for positive definiteness (the
    eigenvalues are ``1 + 2 rho cos(k pi / (p+1))``). Looser values are
    accepted here and vetted lazily at factorization time.
    """

    rho: float = 0.0
    kind = "tridiag"

    def __post_init__(self) -> None:
        super().__post_init__()
        if not math.isfinite(self.rho):
            raise ParameterOutOfRange(f"tridiagonal rho must be finite, got {self.rho}")

    def build(self) -> np.ndarray:
        m = np.eye(self.p)
        idx = np.arange(self.p - 1)
        m[idx, idx + 1] = self.rho
        m[idx + 1, idx] = self.rho
        return m


@dataclass(frozen=True)
class RankOneSpike(CovarianceModel):
    """Rank-one perturbation ``Sigma = I + tau * sqrt(p/n) * u u'`` with unit ``u``.

    The largest eigenvalue is exactly ``1 + tau * sqrt(p/n)``. ``u`` defaults
    to the uniform unit vector; a supplied direction is normalized so that the
    eigenvalue identity holds to machine precision.
    """

    n: int = 0
    tau: float = 0.0
    u: np.ndarray | None = field(default=None, compare=False, repr=False)
    kind = "spike"

    def __post_init__(self) -> None:
        super().__post_init__()
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise ParameterOutOfRange(f"sample size n must be a positive integer, got {self.n!r}")
        if not (math.isfinite(self.tau) and self.tau >= 0.0):
            raise ParameterOutOfRange(f"spike size tau must be finite and >= 0, got {self.tau}")
        if self.u is None:
            u = np.full(self.p, 1.0 / math.sqrt(self.p))
        else:
            u = np.asarray(self.u, dtype=float).reshape(-1)
            if u.shape != (self.p,):
                raise DimensionMismatch(f"u must have length p={self.p}, got {u.shape}")
            norm = float(np.linalg.norm(u))
            if not norm > 0.0:
                raise ParameterOutOfRange("u must be a nonzero direction")
            u = u / norm
        object.__setattr__(self, "u", u)

    @property
    def spike_size(self) -> float:
        """The perturbation magnitude ``tau * sqrt(p/n)``."""
        return self.tau * math.sqrt(self.p / self.n)

    def build(self) -> np.ndarray:
        m = self.spike_size * np.outer(self.u, self.u)
        m[np.diag_indices(self.p)] += 1.0
        return m


@dataclass(frozen=True)
class LeastFavorable(CovarianceModel):
    """Random-sign rank-one perturbation ``(1-a) I + a v v'`` with ``v in {-1,+1}^p``.

    Here ``a = b / sqrt(n (p-1))``. The diagonal entries are all exactly 1 and
    ``||Sigma - I||_F = b sqrt(p/n)`` holds as exact algebra: the off-diagonal
    entries are ``a v_i v_j`` so the squared distance is ``a^2 p (p-1)``.
    """

    n: int = 0
    b: float = 0.0
    v: np.ndarray | None = field(default=None, compare=False, repr=False)
    kind = "leastfav"

    def __post_init__(self) -> None:
        super().__post_init__()
        if self.p < 2:
            raise ParameterOutOfRange("least-favorable model needs p >= 2")
        if not isinstance(self.n, (int, np.integer)) or self.n < 1:
            raise ParameterOutOfRange(f"sample size n must be a positive integer, got {self.n!r}")
        if not (math.isfinite(self.b) and self.b >= 0.0):
            raise ParameterOutOfRange(f"separation b must be finite and >= 0, got {self.b}")
        if self.v is None:
            v = np.ones(self.p)
        else:
            v = np.asarray(self.v, dtype=float).reshape(-1)
            if v.shape != (self.p,):
                raise DimensionMismatch(f"v must have length p={self.p}, got {v.shape}")
            if not np.all(np.abs(v) == 1.0):
                raise ParameterOutOfRange("v must be a vector of +/-1 signs")
        object.__setattr__(self, "v", v)

    @property
    def a(self) -> float:
        """Off-diagonal magnitude ``b / sqrt(n (p-1))``."""
        return self.b / math.sqrt(self.n * (self.p - 1))

    def build(self) -> np.ndarray:
        m = self.a * np.outer(self.v, self.v)
        np.fill_diagonal(m, 1.0)
        return m


@dataclass(frozen=True)
class Dense(CovarianceModel):
    """A user-supplied dense symmetric matrix.

    The input must be exactly symmetric (zero absolute asymmetry); it is
    stored as given and positive definiteness is only checked at
    factorization time.
    """

    matrix: np.ndarray | None = field(default=None, compare=False, repr=False)
    kind = "dense"

    def __init__(self, matrix: np.ndarray):
        m = np.asarray(matrix, dtype=float)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise DimensionMismatch(f"matrix must be square, got shape {m.shape}")
        _check_dimension(m.shape[0])
        if not np.all(np.isfinite(m)):
            raise ParameterOutOfRange("matrix entries must be finite")
        if not np.array_equal(m, m.T):
            raise ParameterOutOfRange("matrix must be exactly symmetric")
        object.__setattr__(self, "p", m.shape[0])
        object.__setattr__(self, "matrix", m)

    def build(self) -> np.ndarray:
        return self.matrix.copy()


def build(model: CovarianceModel) -> np.ndarray:
    """Materialize ``model`` as a dense symmetric matrix."""
    return model.build()


def _as_square_symmetric(sigma: np.ndarray) -> np.ndarray:
    m = np.asarray(sigma, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    return m


def frobenius_distance_to_identity(sigma: np.ndarray) -> float:
    """``||Sigma - I||_F``, the separation metric of the alternative class."""
    m = _as_square_symmetric(sigma)
    d = m - np.eye(m.shape[0])
    return float(np.linalg.norm(d, "fro"))


def spectral_distance_to_identity(sigma: np.ndarray) -> float:
    """Largest absolute eigenvalue of ``Sigma - I`` (symmetric eigensolver)."""
    m = _as_square_symmetric(sigma)
    w = np.linalg.eigvalsh(m - np.eye(m.shape[0]))
    return float(max(abs(w[0]), abs(w[-1])))


def trace_power(sigma: np.ndarray, k: int) -> float:
    """``tr(Sigma^k)`` for integer ``k`` in 1..8, computed from eigenvalues.

    One symmetric eigendecomposition serves every power, which avoids the
    error accumulation of repeated matrix products for k >= 4.
    """
    if not isinstance(k, (int, np.integer)) or not 1 <= k <= 8:
        raise ParameterOutOfRange(f"trace power k must be an integer in 1..8, got {k!r}")
    m = _as_square_symmetric(sigma)
    if k == 1:
        return float(np.trace(m))
    w = np.linalg.eigvalsh(m)
    return float(np.sum(w**k))


def factorize(sigma: np.ndarray) -> np.ndarray:
    """Return a factor ``Gamma`` with ``Gamma Gamma' = Sigma``.

    Cholesky (lower triangular) when the matrix is positive definite; the
    symmetric eigendecomposition square root when the smallest eigenvalue is
    merely nonnegative up to ``-1e-10 * ||Sigma||_s``. Below that the matrix
    is declared not PSD.
    """
    m = _as_square_symmetric(sigma)
    try:
        return np.linalg.cholesky(m)
    except np.linalg.LinAlgError:
        pass
    w, u = np.linalg.eigh(m)
    spectral = max(abs(float(w[0])), abs(float(w[-1])))
    if float(w[0]) < -_PSD_RTOL * spectral:
        raise NotPositiveSemiDefinite(
            f"smallest eigenvalue {w[0]:.3e} is below -1e-10 * spectral norm {spectral:.3e}"
        )
    root = np.sqrt(np.clip(w, 0.0, None))
    return (u * root) @ u.T


def _as_generator(rng) -> np.random.Generator:
    """Accept a Generator, anything with a .generator() factory, or a seed."""
    if isinstance(rng, np.random.Generator):
        return rng
    factory = getattr(rng, "generator", None)
    if callable(factory):
        return factory()
    return np.random.default_rng(rng)


def sample(model: CovarianceModel, n: int, rng) -> np.ndarray:
    """Draw ``n`` mean-zero Gaussian rows with covariance ``model``.

    The draw is ``X = Z Gamma'`` where ``Z`` holds iid standard normals pulled
    from ``rng`` in row-major order, so the output is a deterministic function
    of ``(model, n, rng state)``. ``rng`` may be a ``numpy.random.Generator``,
    an :class:`covtest.mc.RngStream`, or a plain integer seed.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise ParameterOutOfRange(f"sample count n must be a positive integer, got {n!r}")
    gamma = factorize(model.build())
    g = _as_generator(rng)
    z = g.standard_normal((int(n), model.p))
    return z @ gamma.T
