"""Constrained active-learning probe design.

The optimal policy targets a posterior probability ``alpha_k`` that the
next probe is harmless, ``C_t(p) = alpha_k``, where ``alpha_k`` is the design
ratio re-solved for the remaining horizon given the feedback so far.
Exploration comes from drawing the probe direction uniformly on the sphere
and solving only for its length.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegeneratePosteriorError, HorizonExhaustedError, ProbeDesignError
from .truncated import Gaussian, norm_cdf, norm_ppf

DEFAULT_ALPHA_FLOOR = 1e-6
DEFAULT_ALPHA_CEIL = 1.0 - 1e-6
MAX_REDRAWS = 10_000
# Directions are drawn in blocks; acceptance is about 2**-N.
_DRAW_BLOCK = 256


@dataclass(frozen=True)
class PolicyConfig:
    alpha: float
    horizon: int
    alpha_floor: float = DEFAULT_ALPHA_FLOOR
    alpha_ceil: float = DEFAULT_ALPHA_CEIL

    def __post_init__(self):
        if not 0.5 <= self.alpha < 1.0:
            raise ValueError(f"alpha must lie in [0.5, 1), got {self.alpha}")
        if self.horizon < 1:
            raise ValueError("horizon must be at least 1")
        if not 0.0 < self.alpha_floor <= self.alpha <= self.alpha_ceil < 1.0:
            raise ValueError("need 0 < alpha_floor <= alpha <= alpha_ceil < 1")


@dataclass(frozen=True, eq=False)
class ProbeDesign:
    p: np.ndarray
    theta: np.ndarray
    beta: float
    alpha_k: float
    cdf_check: float
    redraws: int = 0


def lambda_star(alpha: float) -> float:
    """Optimal multiplier of the protection constraint, ``0.5 log(a/(1-a))``."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    return 0.5 * math.log(alpha / (1.0 - alpha))


def stage_lagrangian(C, lam):
    """Per-stage Lagrangian ``C log C + (1-C) log(1-C) - lam (2C - 1)``.

    Vectorised over ``C``.
    """
    C = np.asarray(C, dtype=float)
    if np.any((C <= 0.0) | (C >= 1.0)):
        raise ValueError("C must lie strictly inside (0, 1)")
    out = C * np.log(C) + (1.0 - C) * np.log1p(-C) - lam * (2.0 * C - 1.0)
    return float(out) if out.ndim == 0 else out


def stage_minimum(lam: float) -> float:
    """Closed-form minimum of :func:`stage_lagrangian` over ``C``."""
    return lam - math.log1p(math.exp(2.0 * lam))


def stage_minimizer(lam: float) -> float:
    """Closed-form minimiser ``e^{2 lam} / (1 + e^{2 lam})``."""
    return 1.0 / (1.0 + math.exp(-2.0 * lam))


def alpha_unclamped(alpha: float, horizon: int, k: int, z_sum: int) -> float:
    """Design ratio for the remaining ``horizon - k`` probes."""
    if not 0 <= k < horizon:
        raise HorizonExhaustedError(f"step {k} outside horizon {horizon}")
    if abs(z_sum) > k:
        raise ValueError(f"|z_sum|={abs(z_sum)} exceeds number of past steps {k}")
    return (2.0 * alpha * horizon - k - z_sum) / (2.0 * (horizon - k))


def alpha_adapt(cfg: PolicyConfig, k: int, z_sum: int) -> float:
    """Adapted target ratio at step ``k``, clamped to the config bounds."""
    raw = alpha_unclamped(cfg.alpha, cfg.horizon, k, z_sum)
    return min(max(raw, cfg.alpha_floor), cfg.alpha_ceil)


def sample_direction(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform point on the unit sphere in ``R^n``."""
    if n < 1:
        raise ValueError("dimension must be at least 1")
    while True:
        x = rng.standard_normal(n)
        norm = np.linalg.norm(x)
        if norm > 0.0:
            return x / norm


def halfspace_cdf(p, post: Gaussian) -> float:
    """Posterior probability that probe ``p`` is harmless, ``P[h p^T <= 1]``."""
    p = np.asarray(p, dtype=float)
    var = float(p @ post.sigma @ p)
    if not var > 0.0:
        raise DegeneratePosteriorError("zero posterior variance along the probe")
    return float(norm_cdf((1.0 - post.mu @ p) / math.sqrt(var)))


def scale_for_direction(theta, post: Gaussian, alpha_k: float):
    """Scale ``beta`` so that ``C(beta theta) = alpha_k``; None if invalid.

    The ``alpha_k`` quantile ``x`` of ``h theta^T`` must be positive, giving
    ``beta = 1 / x``.
    """
    c1 = float(theta @ post.mu)
    c2 = float(theta @ post.sigma @ theta)
    x = c1 + math.sqrt(c2) * float(norm_ppf(alpha_k))
    return 1.0 / x if x > 0.0 else None


def design_probe(post: Gaussian, alpha_k: float, rng: np.random.Generator,
                 max_redraws: int = MAX_REDRAWS, max_power: float | None = None
                 ) -> ProbeDesign:
    """Random-direction probe meeting the target ``C_t(p) = alpha_k``.

    Directions are drawn on the whole sphere and rejected until the probe
    is non-negative with a positive scale (and, if ``max_power`` is given,
    no component above it).  Raises :class:`ProbeDesignError` after
    ``max_redraws`` rejections.
    """
    if not 0.0 < alpha_k < 1.0:
        raise ValueError(f"alpha_k must lie in (0, 1), got {alpha_k}")
    n = post.dim
    zq = float(norm_ppf(alpha_k))
    tried = 0
    while tried < max_redraws:
        block = min(_DRAW_BLOCK, max_redraws - tried)
        draws = rng.standard_normal((block, n))
        norms = np.linalg.norm(draws, axis=1)
        thetas = draws / norms[:, None]
        c1 = thetas @ post.mu
        c2 = np.einsum("ij,jk,ik->i", thetas, post.sigma, thetas)
        x = c1 + np.sqrt(c2) * zq
        ok = np.all(thetas >= 0.0, axis=1) & (x > 0.0) & (norms > 0.0)
        if max_power is not None:
            ok &= np.all(thetas / np.where(x > 0, x, np.inf)[:, None] <= max_power, axis=1)
        hits = np.flatnonzero(ok)
        if hits.size:
            i = int(hits[0])
            theta = thetas[i]
            beta = 1.0 / float(x[i])
            p = beta * theta
            return ProbeDesign(p, theta, beta, alpha_k, halfspace_cdf(p, post), tried + i)
        tried += block
    raise ProbeDesignError(f"no valid probe direction in {max_redraws} draws")
