"""Moments of a multivariate Gaussian truncated to a single halfspace.

The halfspace ``a x^T <= b`` is first mapped onto a vertical cut ``y_1 <= b``
by a linear change of variables ``y = x T`` whose first column is ``a``.  The
moments of the vertically truncated Gaussian are then obtained from the
moment recursion for rectangle truncations, specialised to a single finite
upper limit, and mapped back through ``T^{-1}``.

Row-vector conventions are used throughout: means are 1-D arrays, and
``x T`` is ``x @ T``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from scipy import special

from .errors import (
    DegenerateTruncationError,
    InvalidCovarianceError,
    InvalidHalfspaceError,
)

#: Truncations with mass below this (or above ``1 - MASS_FLOOR``) are
#: treated as degenerate by callers that need informative moments.
MASS_FLOOR = 1e-12

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


def norm_cdf(z):
    """Standard normal cdf (``scipy.special.ndtr``)."""
    return special.ndtr(z)


def norm_ppf(p):
    """Standard normal quantile (``scipy.special.ndtri``)."""
    return special.ndtri(p)


def norm_pdf(x, mean=0.0, var=1.0):
    """Density of ``N(mean, var)`` at ``x``."""
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * (x - mean) ** 2 / var - _LOG_SQRT_2PI - 0.5 * np.log(var))


def _as_vector(x, name):
    arr = np.array(x, dtype=float, ndmin=1)
    if arr.ndim != 1:
        raise ValueError(f"{name} must be a vector, got shape {arr.shape}")
    return arr


@dataclass(frozen=True, eq=False)
class Gaussian:
    """Multivariate normal ``N(mu, sigma)``.

    Construction checks that ``sigma`` is symmetric positive definite and
    raises :class:`InvalidCovarianceError` otherwise.  The precision matrix
    is computed lazily and cached.
    """

    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        mu = _as_vector(self.mu, "mu")
        sigma = np.array(self.sigma, dtype=float, ndmin=2)
        n = mu.shape[0]
        if sigma.shape != (n, n):
            raise InvalidCovarianceError(
                f"covariance shape {sigma.shape} does not match mean length {n}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(sigma))):
            raise InvalidCovarianceError("non-finite Gaussian parameters")
        scale = max(np.max(np.abs(sigma)), np.finfo(float).tiny)
        if np.max(np.abs(sigma - sigma.T)) > 1e-10 * scale:
            raise InvalidCovarianceError("covariance is not symmetric")
        sigma = 0.5 * (sigma + sigma.T)
        try:
            chol = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError as exc:
            raise InvalidCovarianceError("covariance is not positive definite") from exc
        mu.setflags(write=False)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "_chol", chol)

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    @cached_property
    def precision(self) -> np.ndarray:
        inv_chol = np.linalg.inv(self._chol)
        prec = inv_chol.T @ inv_chol
        prec.setflags(write=False)
        return prec

    @cached_property
    def shift(self) -> np.ndarray:
        """Precision-weighted mean ``mu Sigma^{-1}``."""
        out = self.mu @ self.precision
        out.setflags(write=False)
        return out

    @classmethod
    def from_natural(cls, prec, shift) -> "Gaussian":
        """Build from precision matrix and precision-weighted mean."""
        prec = np.asarray(prec, dtype=float)
        prec = 0.5 * (prec + prec.T)
        try:
            chol = np.linalg.cholesky(prec)
        except np.linalg.LinAlgError as exc:
            raise InvalidCovarianceError("precision is not positive definite") from exc
        inv_chol = np.linalg.inv(chol)
        sigma = inv_chol.T @ inv_chol
        mu = sigma @ np.asarray(shift, dtype=float)
        return cls(mu, 0.5 * (sigma + sigma.T))

    def __repr__(self):
        return f"Gaussian(mu={self.mu!r}, sigma={self.sigma!r})"


GaussianState = Gaussian


@dataclass(frozen=True, eq=False)
class Halfspace:
    """The closed halfspace ``{x : a x^T <= b}``."""

    a: np.ndarray
    b: float

    def __post_init__(self):
        a = _as_vector(self.a, "a")
        if not np.all(np.isfinite(a)) or not np.any(a != 0.0):
            raise InvalidHalfspaceError(f"invalid halfspace normal {a!r}")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", float(self.b))

    def contains(self, x) -> np.ndarray:
        """Membership test for one point or an ``(n, N)`` batch."""
        return np.asarray(x, dtype=float) @ self.a <= self.b

    def complement(self) -> "Halfspace":
        return Halfspace(-self.a, -self.b)


@dataclass(frozen=True, eq=False)
class TruncatedMoments:
    """Mass, mean and covariance of a truncated Gaussian."""

    mass: float
    mean: np.ndarray
    cov: np.ndarray = field(repr=False)


def halfspace_mass(h: Halfspace, g: Gaussian) -> float:
    """Closed-form Gaussian probability of a halfspace."""
    s = float(h.a @ g.sigma @ h.a)
    return float(norm_cdf((h.b - h.a @ g.mu) / math.sqrt(s)))


def conditional_params(j: int, value: float, g: Gaussian):
    """Mean and covariance of the other coordinates given ``x_j = value``.

    ``j`` is zero-based.  Returns ``(mu_cond, sigma_cond)`` with length
    ``N - 1``.
    """
    n = g.dim
    if not 0 <= j < n:
        raise IndexError(f"coordinate {j} out of range for dimension {n}")
    s_jj = g.sigma[j, j]
    if not s_jj > 0.0:
        raise InvalidCovarianceError(f"non-positive variance {s_jj} at coordinate {j}")
    rest = np.delete(np.arange(n), j)
    cross = g.sigma[rest, j]
    mu_cond = g.mu[rest] + cross * (value - g.mu[j]) / s_jj
    sigma_cond = g.sigma[np.ix_(rest, rest)] - np.outer(cross, cross) / s_jj
    return mu_cond, sigma_cond


def _vertical_integrals(b: float, mu: np.ndarray, sigma: np.ndarray):
    """Integrals ``L_0``, ``L_{e_i}`` and ``L_{e_m + e_n}`` over ``x_1 <= b``.

    Only the upper limit of coordinate 1 is finite, so every boundary term of
    the recursion vanishes except the one at ``x_1 = b``.
    """
    n = mu.shape[0]
    s11 = sigma[0, 0]
    l0 = float(norm_cdf((b - mu[0]) / math.sqrt(s11)))
    dens = float(norm_pdf(b, mu[0], s11))

    # c_0: zero except the upper-limit term of coordinate 1.
    c0 = np.zeros(n)
    c0[0] = -dens
    l1 = mu * l0 + sigma @ c0

    # Moments of the remaining coordinates on the cut x_1 = b.
    g = Gaussian(mu, sigma)
    if n > 1:
        mu_cond, _ = conditional_params(0, b, g)
        on_cut = np.concatenate(([b], mu_cond))
    else:
        on_cut = np.array([b])

    l2 = np.empty((n, n))
    for m in range(n):
        # c_{e_m}: k_j L_{k - e_j} term, plus the boundary term at x_1 = b
        # where x_m^{k_m} integrates to E[x_m | x_1 = b].
        c = np.zeros(n)
        c[m] += l0
        c[0] -= dens * on_cut[m]
        l2[m] = mu * l1[m] + sigma @ c
    return l0, l1, l2


def moments_vertical(b1: float, g: Gaussian) -> TruncatedMoments:
    """Moments of ``g`` truncated to ``x_1 <= b1``.

    The recursion is evaluated for the centred Gaussian and the mean added
    back afterwards; this avoids the cancellation in ``C / c - q^T q`` when
    the mean is large compared with the spread.

    Raises
    ------
    DegenerateTruncationError
        If the retained mass is below :data:`MASS_FLOOR`.
    """
    b1 = float(b1)
    if math.isinf(b1) and b1 > 0:
        return TruncatedMoments(1.0, g.mu.copy(), g.sigma.copy())
    if math.isnan(b1):
        raise ValueError("truncation limit is NaN")
    mass = float(norm_cdf((b1 - g.mu[0]) / math.sqrt(g.sigma[0, 0])))
    if not mass >= MASS_FLOOR:
        raise DegenerateTruncationError(mass)

    l0, l1, l2 = _vertical_integrals(b1 - g.mu[0], np.zeros(g.dim), g.sigma)
    offset = l1 / l0
    cov = l2 / l0 - np.outer(offset, offset)
    cov = 0.5 * (cov + cov.T)
    return TruncatedMoments(mass, g.mu + offset, cov)


def _pivot_index(a: np.ndarray, pivot: int | None) -> int:
    if pivot is None:
        return int(np.argmax(np.abs(a)))
    if a[pivot] == 0.0:
        raise InvalidHalfspaceError(f"pivot coefficient a[{pivot}] is zero")
    return pivot


def transform_matrix(a, pivot: int | None = None) -> np.ndarray:
    """Matrix ``T`` with ``(x T)_1 = a x^T`` and unit columns elsewhere.

    With ``pivot=0`` this is the lower-triangular form whose first column is
    ``a``.  For another pivot ``k`` the unit vector ``e_k`` is dropped from
    the remaining columns, so ``det(T) = +/- a_k``.
    """
    a = _as_vector(a, "a")
    k = _pivot_index(a, pivot)
    n = a.shape[0]
    rest = [i for i in range(n) if i != k]
    T = np.zeros((n, n))
    T[:, 0] = a
    for col, i in enumerate(rest, start=1):
        T[i, col] = 1.0
    return T


def inverse_transform_matrix(a, pivot: int | None = None) -> np.ndarray:
    """Closed-form ``T^{-1}`` for :func:`transform_matrix`."""
    a = _as_vector(a, "a")
    k = _pivot_index(a, pivot)
    n = a.shape[0]
    rest = [i for i in range(n) if i != k]
    M = np.zeros((n, n))
    M[0, k] = 1.0 / a[k]
    for row, i in enumerate(rest, start=1):
        M[row, i] = 1.0
        M[row, k] = -a[i] / a[k]
    return M


def halfspace_transform(h: Halfspace, g: Gaussian, pivot: int | None = None):
    """Map ``g`` to the coordinates in which ``h`` is the cut ``y_1 <= b``.

    Returns ``(T, g_y)`` where ``g_y`` is the law of ``y = x T``.  The pivot
    defaults to the largest-magnitude coefficient of ``h.a``.
    """
    T = transform_matrix(h.a, pivot)
    sigma_y = T.T @ g.sigma @ T
    return T, Gaussian(g.mu @ T, 0.5 * (sigma_y + sigma_y.T))


def truncated_moments_halfspace(h: Halfspace, g: Gaussian,
                                pivot: int | None = None) -> TruncatedMoments:
    """Mass, mean and covariance of ``g`` restricted to ``h``.

    >>> g = Gaussian([0.0, 0.0], [[1.0, 0.0], [0.0, 1.0]])
    >>> m = truncated_moments_halfspace(Halfspace([1.0, 0.0], 0.0), g)
    >>> round(m.mass, 6), round(float(m.mean[0]), 6)
    (0.5, -0.797885)
    """
    if h.a.shape[0] != g.dim:
        raise InvalidHalfspaceError(
            f"halfspace dimension {h.a.shape[0]} does not match Gaussian {g.dim}")
    T, g_y = halfspace_transform(h, g, pivot)
    Tinv = inverse_transform_matrix(h.a, pivot)
    m_y = moments_vertical(h.b, g_y)
    mean = m_y.mean @ Tinv
    cov = Tinv.T @ m_y.cov @ Tinv
    return TruncatedMoments(m_y.mass, mean, 0.5 * (cov + cov.T))
