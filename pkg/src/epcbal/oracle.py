"""Sampling ground truth for the uniform polytope posterior.

With indicator likelihoods and a box prior the exact posterior is uniform
on the box cut by every observed halfspace.  Plain rejection from the box
is exact and fast while the polytope is a sizeable part of the box;
hit-and-run takes over once acceptance collapses.

:class:`SampleLearner` is the sample-based comparator: it tracks the
polytope with a particle population and sets the probe length from the
empirical quantile of the projections.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .ep import PriorBox, obs_to_halfspace
from .errors import InfeasibleRegionError, ProbeDesignError
from .policy import MAX_REDRAWS, ProbeDesign, sample_direction
from .truncated import Halfspace

MIN_ACCEPTANCE = 1e-3
BURN_IN = 1000
THIN = 10


@dataclass(eq=False)
class PolytopePosterior:
    box: PriorBox
    halfspaces: list = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.box.dim

    def constraints(self):
        """All constraints, box faces included, as ``(A, b)`` with ``A x <= b``."""
        n = self.dim
        eye = np.eye(n)
        A = [-eye, eye] + [h.a[None, :] for h in self.halfspaces]
        b = [-self.box.lo, self.box.hi] + [np.array([h.b]) for h in self.halfspaces]
        return np.vstack(A), np.concatenate(b)

    def contains(self, x) -> np.ndarray:
        A, b = self.constraints()
        return np.all(np.asarray(x, dtype=float) @ A.T <= b, axis=-1)

    def add(self, h: Halfspace) -> "PolytopePosterior":
        return PolytopePosterior(self.box, self.halfspaces + [h])


def chebyshev_center(post: PolytopePosterior):
    """Centre and radius of the largest inscribed ball."""
    A, b = post.constraints()
    norms = np.linalg.norm(A, axis=1)
    n = post.dim
    c = np.zeros(n + 1)
    c[-1] = -1.0
    res = linprog(c, A_ub=np.hstack([A, norms[:, None]]), b_ub=b,
                  bounds=[(None, None)] * n + [(0, None)], method="highs")
    if res.status != 0 or res.x[-1] <= 0:
        raise InfeasibleRegionError("polytope has empty interior")
    return res.x[:n], float(res.x[-1])


def _hit_and_run_steps(x, A, b, steps, rng):
    """Advance every row of ``x`` by ``steps`` hit-and-run moves in place."""
    n_chains, n = x.shape
    for _ in range(steps):
        d = rng.standard_normal((n_chains, n))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        slack = b[None, :] - x @ A.T
        rate = d @ A.T
        with np.errstate(divide="ignore", invalid="ignore"):
            t = slack / rate
        t_hi = np.min(np.where(rate > 0, t, np.inf), axis=1)
        t_lo = np.max(np.where(rate < 0, t, -np.inf), axis=1)
        step = t_lo + (t_hi - t_lo) * rng.uniform(size=n_chains)
        x += step[:, None] * d
    return x


def hit_and_run(post: PolytopePosterior, n: int, rng: np.random.Generator,
                x0=None, burn_in: int = BURN_IN, thin: int = THIN,
                n_chains: int | None = None) -> np.ndarray:
    """``n`` approximately uniform points from parallel hit-and-run chains."""
    A, b = post.constraints()
    if x0 is None:
        x0, _ = chebyshev_center(post)
    n_chains = n_chains or min(n, 200)
    x = np.tile(np.asarray(x0, dtype=float), (n_chains, 1))
    _hit_and_run_steps(x, A, b, burn_in, rng)
    out = []
    while sum(len(o) for o in out) < n:
        _hit_and_run_steps(x, A, b, thin, rng)
        out.append(x.copy())
    return np.vstack(out)[:n]


def rejection_sample(post: PolytopePosterior, n: int, rng: np.random.Generator,
                     batch: int = 65_536, budget: int = 50) -> np.ndarray:
    """``n`` independent uniform points of the polytope.

    Box proposals are accepted or rejected in batches.  If the observed
    acceptance rate drops below :data:`MIN_ACCEPTANCE`, the remaining points
    come from :func:`hit_and_run` started at an accepted point (or at the
    Chebyshev centre).
    """
    if n < 1:
        raise ValueError("need at least one sample")
    A, b = post.constraints()
    lo, hi = post.box.lo, post.box.hi
    kept, proposed, accepted = [], 0, 0
    for _ in range(budget):
        x = lo + (hi - lo) * rng.uniform(size=(batch, post.dim))
        ok = np.all(x @ A.T <= b, axis=1)
        proposed += batch
        accepted += int(ok.sum())
        kept.append(x[ok])
        if accepted >= n:
            return np.vstack(kept)[:n]
        if accepted < MIN_ACCEPTANCE * proposed:
            start = np.vstack(kept)[0] if accepted else None
            extra = hit_and_run(post, n - accepted, rng, x0=start)
            return np.vstack(kept + [extra])
    raise InfeasibleRegionError(f"only {accepted} of {n} samples after {proposed} proposals")


def empirical_moments(samples):
    """Sample mean and unbiased sample covariance."""
    samples = np.asarray(samples, dtype=float)
    if samples.ndim != 2 or samples.shape[0] < 2:
        raise ValueError("need at least two samples")
    return samples.mean(axis=0), np.cov(samples, rowvar=False, ddof=1).reshape(
        samples.shape[1], samples.shape[1])


def projection_quantile(samples, theta, alpha_k: float) -> float:
    """Empirical ``alpha_k`` quantile of ``h theta^T`` (inverted cdf)."""
    s = np.asarray(samples, dtype=float) @ np.asarray(theta, dtype=float)
    return float(np.quantile(s, alpha_k, method="inverted_cdf"))


def quantile_probe(samples, theta, alpha_k: float):
    """Probe along ``theta`` passing the empirical ``alpha_k`` quantile.

    Returns ``p = theta / x`` or ``None`` when ``theta`` has a negative
    component or the quantile ``x`` is not positive (draw another
    direction).
    """
    if not 0.0 < alpha_k < 1.0:
        raise ValueError(f"alpha_k must lie in (0, 1), got {alpha_k}")
    theta = np.asarray(theta, dtype=float)
    if np.any(theta < 0):
        return None
    x = projection_quantile(samples, theta, alpha_k)
    if not x > 0.0:
        return None
    return theta / x


class SampleLearner:
    """Particle approximation of the polytope posterior.

    After each observation the particles outside the new halfspace are
    dropped, the survivors resampled back to full size and every particle
    moved by ``moves`` hit-and-run steps.  The uniform law on the polytope
    is invariant under both operations.
    """

    def __init__(self, box: PriorBox, n_samples: int, rng: np.random.Generator,
                 moves: int = THIN):
        self.post = PolytopePosterior(box)
        self.n_samples = n_samples
        self.moves = moves
        self.rng = rng
        self.samples = box.lo + (box.hi - box.lo) * rng.uniform(size=(n_samples, box.dim))

    def design(self, alpha_k: float, rng, max_redraws: int = MAX_REDRAWS) -> ProbeDesign:
        for tried in range(max_redraws):
            theta = sample_direction(self.post.dim, rng)
            p = quantile_probe(self.samples, theta, alpha_k)
            if p is not None:
                cdf = float(np.mean(self.samples @ p <= 1.0))
                beta = float(np.linalg.norm(p))
                return ProbeDesign(p, theta, beta, alpha_k, cdf, tried)
        raise ProbeDesignError(f"no valid probe direction in {max_redraws} draws")

    def update(self, p, z: int):
        hs = obs_to_halfspace(p, z)
        self.post = self.post.add(hs)
        inside = self.samples[hs.contains(self.samples)]
        if inside.shape[0] == 0:
            self.samples = hit_and_run(self.post, self.n_samples, self.rng)
            return
        idx = self.rng.integers(0, inside.shape[0], size=self.n_samples)
        x = inside[idx]
        A, b = self.post.constraints()
        self.samples = _hit_and_run_steps(x, A, b, self.moves, self.rng)

    def estimate(self) -> np.ndarray:
        return self.samples.mean(axis=0)


def oracle_moments(box: PriorBox, halfspaces, n: int, rng: np.random.Generator):
    """Mean, covariance and mean standard error of the exact posterior."""
    samples = rejection_sample(PolytopePosterior(box, list(halfspaces)), n, rng)
    mean, cov = empirical_moments(samples)
    return mean, cov, np.sqrt(np.diag(cov) / samples.shape[0])


__all__ = [
    "PolytopePosterior", "SampleLearner", "chebyshev_center", "empirical_moments",
    "hit_and_run", "oracle_moments", "projection_quantile", "quantile_probe",
    "rejection_sample",
]
