"""Expectation propagation over halfspace likelihoods and a box prior.

Every likelihood term (and every face of the prior box) is a halfspace
indicator.  Each is approximated by a Gaussian site held in natural
parameters; the posterior approximation is the normalised product of all
sites.  Refining a site means moment matching the cavity times the exact
indicator, which is a one-side truncated Gaussian
(:func:`epcbal.truncated.truncated_moments_halfspace`).

The sweep loop exists twice: a compiled version in ``epcbal._ep_kernel``
and :func:`python_sweeps` below.  The compiled one is used when it imports,
unless ``EPCBAL_PURE_PYTHON`` is set in the environment.
"""
from __future__ import annotations

import logging
import os
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    CavityError,
    DegenerateTruncationError,
    InvalidCovarianceError,
    InvalidProbeError,
    InvalidStateError,
)
from .truncated import (
    MASS_FLOOR,
    Gaussian,
    GaussianState,
    Halfspace,
    TruncatedMoments,
    truncated_moments_halfspace,
)

try:
    from ._ep_kernel import ep_sweeps as _compiled_sweeps
except ImportError:  # pragma: no cover - depends on the build
    _compiled_sweeps = None

log = logging.getLogger(__name__)

DEFAULT_SWEEPS = 5
PRIOR_SWEEPS = 20
DAMPING_RETRIES = 3

# Columns of the per-sweep statistics array.
ACCEPTED, SKIPPED, FAILED, DAMPED = range(4)


def available_backends():
    return ["compiled", "python"] if _compiled_sweeps is not None else ["python"]


def default_backend() -> str:
    if _compiled_sweeps is None or os.environ.get("EPCBAL_PURE_PYTHON"):
        return "python"
    return "compiled"


BACKEND = default_backend()


@dataclass(frozen=True, eq=False)
class SiteApprox:
    """Gaussian site in natural parameters.

    ``prec`` is the site's contribution to the total precision and
    ``shift`` its contribution to the precision-weighted mean.  A site that
    has never been refined is flat (all zeros) and inactive.
    """

    prec: np.ndarray
    shift: np.ndarray
    active: bool = False

    @classmethod
    def flat(cls, n: int) -> "SiteApprox":
        return cls(np.zeros((n, n)), np.zeros(n), False)


@dataclass(frozen=True, eq=False)
class PriorBox:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=float, ndmin=1)
        hi = np.array(self.hi, dtype=float, ndmin=1)
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("box bounds must be vectors of equal length")
        if np.any(lo < 0) or not np.all(lo < hi) or not np.all(np.isfinite(hi)):
            raise ValueError(f"invalid prior box lo={lo}, hi={hi}")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def diagonal(self) -> float:
        return float(np.linalg.norm(self.hi - self.lo))

    def contains(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.all((x >= self.lo) & (x <= self.hi), axis=-1)

    def reference(self) -> Gaussian:
        """Broad Gaussian used to bootstrap the first sweep."""
        return Gaussian(self.center, np.diag((self.hi - self.lo) ** 2))


@dataclass(frozen=True, eq=False)
class HalfspaceObs:
    """A probe ``p`` with feedback ``z`` and its halfspace in h-space."""

    p: np.ndarray
    z: int
    halfspace: Halfspace


def obs_to_halfspace(p, z: int) -> Halfspace:
    """Halfspace of gains consistent with feedback ``z`` to probe ``p``.

    ``z = +1`` gives ``h p^T <= 1``; ``z = -1`` gives the closed complement
    ``-h p^T <= -1``.
    """
    p = np.array(p, dtype=float, ndmin=1)
    if not np.all(np.isfinite(p)) or np.any(p < 0) or not np.any(p > 0):
        raise InvalidProbeError(f"invalid probe vector {p!r}")
    if z == 1:
        return Halfspace(p, 1.0)
    if z == -1:
        return Halfspace(-p, -1.0)
    raise ValueError(f"feedback must be +1 or -1, got {z!r}")


def make_observation(p, z: int) -> HalfspaceObs:
    hs = obs_to_halfspace(p, z)
    return HalfspaceObs(np.array(p, dtype=float, ndmin=1), int(z), hs)


def prior_box_sites(box: PriorBox) -> list[Halfspace]:
    """The ``2N`` faces of the box, ordered ``lo_0, hi_0, lo_1, hi_1, ...``."""
    faces = []
    for i in range(box.dim):
        e = np.zeros(box.dim)
        e[i] = 1.0
        faces.append(Halfspace(-e, -box.lo[i]))
        faces.append(Halfspace(e.copy(), box.hi[i]))
    return faces


def gaussian_product_params(sites) -> GaussianState:
    """Normalised product of Gaussian sites."""
    sites = list(sites)
    prec = sum(s.prec for s in sites)
    shift = sum(s.shift for s in sites)
    try:
        return Gaussian.from_natural(prec, shift)
    except InvalidCovarianceError as exc:
        raise InvalidStateError("total site precision is not positive definite") from exc


@dataclass(eq=False)
class PosteriorState:
    """Site set and the Gaussian posterior approximation it defines.

    Array storage:

    ``normals`` (S, N), ``offsets`` (S,)
        halfspace of each site; the first ``2N`` are the box faces.
    ``prec`` (S, N, N), ``shift`` (S, N), ``active`` (S,)
        site natural parameters.
    ``total_prec``, ``total_shift``
        running sums of the site parameters.

    Treat instances as values: the operations in this module return new
    states and never modify their inputs.
    """

    box: PriorBox
    normals: np.ndarray
    offsets: np.ndarray
    prec: np.ndarray
    shift: np.ndarray
    active: np.ndarray
    total_prec: np.ndarray
    total_shift: np.ndarray
    history: tuple = ()
    stats: np.ndarray | None = field(default=None, repr=False)

    @classmethod
    def from_box(cls, box: PriorBox) -> "PosteriorState":
        faces = prior_box_sites(box)
        n, s = box.dim, len(faces)
        return cls(
            box=box,
            normals=np.array([f.a for f in faces]),
            offsets=np.array([f.b for f in faces]),
            prec=np.zeros((s, n, n)),
            shift=np.zeros((s, n)),
            active=np.zeros(s, dtype=bool),
            total_prec=np.zeros((n, n)),
            total_shift=np.zeros(n),
        )

    @property
    def dim(self) -> int:
        return self.box.dim

    @property
    def n_sites(self) -> int:
        return self.offsets.shape[0]

    @property
    def sites(self) -> list[SiteApprox]:
        return [SiteApprox(self.prec[i].copy(), self.shift[i].copy(), bool(self.active[i]))
                for i in range(self.n_sites)]

    @property
    def halfspaces(self) -> list[Halfspace]:
        return [Halfspace(a, b) for a, b in zip(self.normals, self.offsets)]

    @property
    def total(self) -> GaussianState:
        try:
            return Gaussian.from_natural(self.total_prec, self.total_shift)
        except InvalidCovarianceError as exc:
            raise InvalidStateError("posterior precision is not positive definite") from exc

    @property
    def mean(self) -> np.ndarray:
        return self.total.mu

    def copy(self) -> "PosteriorState":
        return PosteriorState(
            self.box, self.normals.copy(), self.offsets.copy(), self.prec.copy(),
            self.shift.copy(), self.active.copy(), self.total_prec.copy(),
            self.total_shift.copy(), self.history, None)

    def with_site(self, hs: Halfspace, obs: HalfspaceObs | None = None) -> "PosteriorState":
        """Copy with a flat site for ``hs`` appended."""
        n = self.dim
        new = self.copy()
        new.normals = np.vstack([self.normals, hs.a[None, :]])
        new.offsets = np.append(self.offsets, hs.b)
        new.prec = np.concatenate([self.prec, np.zeros((1, n, n))])
        new.shift = np.vstack([self.shift, np.zeros((1, n))])
        new.active = np.append(self.active, False)
        if obs is not None:
            new.history = self.history + (obs,)
        return new


def cavity(state: PosteriorState, j: int) -> GaussianState:
    """Total approximation with site ``j`` divided out."""
    prec = state.total_prec - state.prec[j]
    shift = state.total_shift - state.shift[j]
    try:
        return Gaussian.from_natural(prec, shift)
    except InvalidCovarianceError as exc:
        raise CavityError(f"cavity for site {j} is not positive definite") from exc


def site_update(cav: GaussianState, lik: Halfspace):
    """Moment-matched site for ``lik`` given the cavity ``cav``.

    Returns ``(new_site, moments)``.  Only the mean and covariance are
    matched; the site normaliser is not tracked.

    Raises
    ------
    DegenerateTruncationError
        When the cavity mass inside ``lik`` is outside
        ``[MASS_FLOOR, 1 - MASS_FLOOR]``; the site should be left as is.
    """
    moments = truncated_moments_halfspace(lik, cav)
    if moments.mass > 1.0 - MASS_FLOOR:
        raise DegenerateTruncationError(moments.mass, "uninformative truncation")
    q_prec = Gaussian(moments.mean, moments.cov).precision
    prec = q_prec - cav.precision
    shift = moments.mean @ q_prec - cav.shift
    return SiteApprox(0.5 * (prec + prec.T), shift, True), moments


def _is_pd(mat: np.ndarray) -> bool:
    try:
        np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        return False
    return True


def python_sweeps(normals, offsets, prec, shift, active, total_prec, total_shift,
                  ref_prec, ref_shift, n_sweeps, mass_floor=MASS_FLOOR):
    """Reference sweep loop; arrays are updated in place.

    Returns an ``(n_sweeps, 4)`` integer array of accepted, skipped,
    failed and damped site updates per sweep.
    """
    stats = np.zeros((n_sweeps, 4), dtype=np.int64)
    total_pd = _is_pd(total_prec)
    for sweep in range(n_sweeps):
        for j in range(offsets.shape[0]):
            cav_prec = total_prec - prec[j]
            cav_shift = total_shift - shift[j]
            bootstrap = False
            if not _is_pd(cav_prec):
                if total_pd:
                    stats[sweep, FAILED] += 1
                    continue
                bootstrap = True
            work_prec, work_shift = cav_prec, cav_shift
            if bootstrap:
                work_prec, work_shift = cav_prec + ref_prec, cav_shift + ref_shift
            lik = Halfspace(normals[j], offsets[j])
            try:
                cav = Gaussian.from_natural(work_prec, work_shift)
                site, _ = site_update(cav, lik)
            except DegenerateTruncationError as exc:
                stats[sweep, SKIPPED if exc.mass > 0.5 else FAILED] += 1
                continue
            except InvalidCovarianceError:
                stats[sweep, FAILED] += 1
                continue

            new_prec, new_shift = site.prec, site.shift
            # While bootstrapping the reference was divided out along with the
            # cavity, so the site holds only the face's own information and
            # the (still non-PD) total is not checked.
            if not bootstrap:
                for attempt in range(DAMPING_RETRIES + 1):
                    if _is_pd(cav_prec + new_prec):
                        break
                    if attempt == DAMPING_RETRIES:
                        new_prec = None
                        break
                    new_prec = 0.5 * (new_prec + prec[j])
                    new_shift = 0.5 * (new_shift + shift[j])
                    stats[sweep, DAMPED] += 1
                if new_prec is None:
                    stats[sweep, FAILED] += 1
                    continue

            prec[j] = new_prec
            shift[j] = new_shift
            active[j] = True
            total_prec[:] = cav_prec + new_prec
            total_prec[:] = 0.5 * (total_prec + total_prec.T)
            total_shift[:] = cav_shift + new_shift
            stats[sweep, ACCEPTED] += 1
            if not total_pd:
                total_pd = _is_pd(total_prec)
    return stats


def _sweep_function(backend: str | None):
    backend = backend or BACKEND
    if backend == "compiled":
        if _compiled_sweeps is None:
            raise RuntimeError("compiled EP kernel is not available")
        return _compiled_sweeps
    if backend == "python":
        return python_sweeps
    raise ValueError(f"unknown backend {backend!r}")


def run_ep(state: PosteriorState, sweeps: int = DEFAULT_SWEEPS,
           backend: str | None = None) -> PosteriorState:
    """Run ``sweeps`` EP passes over every site, in site order.

    The returned state carries per-sweep counts in ``state.stats``.  A
    sweep in which no site could be updated and at least one failed emits a
    :class:`RuntimeWarning`.
    """
    new = state.copy()
    new.total_prec = new.prec.sum(axis=0)
    new.total_shift = new.shift.sum(axis=0)
    ref = state.box.reference()
    fn = _sweep_function(backend)
    stats = fn(new.normals, new.offsets, new.prec, new.shift, new.active,
               new.total_prec, new.total_shift, np.ascontiguousarray(ref.precision),
               np.ascontiguousarray(ref.shift), int(sweeps), MASS_FLOOR)
    new.stats = np.asarray(stats)
    for k, row in enumerate(new.stats):
        if row[ACCEPTED] == 0 and row[FAILED] > 0:
            warnings.warn(f"EP sweep {k} stagnated: {row[FAILED]} site failures",
                          RuntimeWarning, stacklevel=2)
    log.debug("EP stats %s", new.stats.tolist())
    return new


def initial_posterior(box: PriorBox, sweeps: int = PRIOR_SWEEPS,
                      backend: str | None = None) -> PosteriorState:
    """EP approximation of the uniform box prior alone.

    The face sites are fitted one after another against the bootstrap
    reference, which leaves an asymmetry decaying by roughly three orders of
    magnitude every five sweeps.  The prior fit is done once per trial, so
    it gets more sweeps than an observation update.
    """
    return run_ep(PosteriorState.from_box(box), sweeps, backend)


def posterior_update(state: PosteriorState, obs: HalfspaceObs,
                     sweeps: int = DEFAULT_SWEEPS,
                     backend: str | None = None) -> PosteriorState:
    """Add a flat site for ``obs`` and re-run EP from the current sites."""
    return run_ep(state.with_site(obs.halfspace, obs), sweeps, backend)


__all__ = [
    "BACKEND", "HalfspaceObs", "PosteriorState", "PriorBox", "SiteApprox",
    "TruncatedMoments", "available_backends", "cavity", "gaussian_product_params",
    "initial_posterior", "make_observation", "obs_to_halfspace", "posterior_update",
    "prior_box_sites", "python_sweeps", "run_ep", "site_update",
]
