"""Cognitive-radio probing scenarios and the probe/feedback/update loop."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import ep
from .ep import PriorBox, initial_posterior, make_observation, posterior_update
from .errors import EPCBALError, ProbeDesignError
from .policy import PolicyConfig, alpha_adapt, design_probe

log = logging.getLogger(__name__)

METHODS = ("ep", "mcmc-oracle")


def dbm_to_mw(dbm: float) -> float:
    return 10.0 ** (dbm / 10.0)


@dataclass(frozen=True)
class TrialConfig:
    """One simulated deployment.

    ``d_min`` is the smallest SU-to-PU distance a deployment may have; it
    both floors the drawn distances and fixes the prior box
    ``[0, d_min^-4 / I_th]`` in every coordinate.

    Targets below 1/2 ask for probes that are probably harmful, which a
    Gaussian posterior with mass near zero may be unable to provide along
    any non-negative direction.  When that happens the probe is designed
    for ``alpha_fallback`` instead (``None`` aborts the trial).
    """

    n_sus: int = 5
    range_m: float = 3000.0
    i_th_dbm: float = -97.0
    alpha: float = 0.5
    n_flops: int = 100
    seed: int = 0
    method: str = "ep"
    d_min: float = 500.0
    ep_sweeps: int = ep.DEFAULT_SWEEPS
    n_samples: int = 20_000
    max_power: float | None = None
    alpha_floor: float = 1e-6
    alpha_ceil: float = 1.0 - 1e-6
    alpha_fallback: float | None = 0.5

    def __post_init__(self):
        if self.n_sus < 1:
            raise ValueError("n_sus must be at least 1")
        if not self.range_m > 0:
            raise ValueError("range_m must be positive")
        if not 0 < self.d_min <= self.range_m:
            raise ValueError("d_min must lie in (0, range_m]")
        if not 0.5 <= self.alpha < 1.0:
            raise ValueError("alpha must lie in [0.5, 1)")
        if self.n_flops < 1:
            raise ValueError("n_flops must be at least 1")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if self.alpha_fallback is not None and not 0.0 < self.alpha_fallback < 1.0:
            raise ValueError("alpha_fallback must lie in (0, 1)")
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}; expected one of {METHODS}")

    @property
    def i_th_mw(self) -> float:
        return dbm_to_mw(self.i_th_dbm)

    def policy(self) -> PolicyConfig:
        return PolicyConfig(self.alpha, self.n_flops, self.alpha_floor, self.alpha_ceil)

    def prior_box(self) -> PriorBox:
        h_max = self.d_min ** -4 / self.i_th_mw
        return PriorBox(np.zeros(self.n_sus), np.full(self.n_sus, h_max))


@dataclass(frozen=True, eq=False)
class Topology:
    distances: np.ndarray
    gains: np.ndarray
    i_th: float
    h_star: np.ndarray

    @classmethod
    def from_distances(cls, distances, i_th_mw: float) -> "Topology":
        d = np.asarray(distances, dtype=float)
        if np.any(d <= 0):
            raise ValueError("distances must be positive")
        g = d ** -4.0
        return cls(d, g, float(i_th_mw), g / i_th_mw)


def generate_topology(cfg: TrialConfig, rng: np.random.Generator) -> Topology:
    """SUs uniform over the disk of radius ``range_m`` around the PU receiver."""
    radius = cfg.range_m * np.sqrt(rng.uniform(size=cfg.n_sus))
    rng.uniform(0.0, 2.0 * math.pi, size=cfg.n_sus)  # bearing; gains ignore it
    return Topology.from_distances(np.maximum(radius, cfg.d_min), cfg.i_th_mw)


def feedback(topo: Topology, p) -> int:
    """ACK (+1) iff the normalised interference ``h* p^T`` is at most 1."""
    p = np.asarray(p, dtype=float)
    if np.any(p < 0):
        raise ValueError("probe powers must be non-negative")
    return 1 if float(topo.h_star @ p) <= 1.0 else -1


def estimation_error(h_hat, h_star) -> float:
    """Normalised root-square error ``||h_hat - h*|| / ||h*||``."""
    h_star = np.asarray(h_star, dtype=float)
    norm = float(np.linalg.norm(h_star))
    if norm == 0.0:
        raise ValueError("true gain vector is zero")
    return float(np.linalg.norm(np.asarray(h_hat, dtype=float) - h_star)) / norm


def protection_ratio(zs) -> float:
    """Fraction of ACKs in a feedback sequence."""
    zs = np.asarray(zs)
    if zs.size == 0:
        raise ValueError("empty feedback sequence")
    return float(np.mean(zs == 1))


class EPLearner:
    """Gaussian EP posterior with the closed-form probe designer."""

    def __init__(self, box: PriorBox, sweeps: int = ep.DEFAULT_SWEEPS,
                 max_power: float | None = None, backend: str | None = None):
        self.sweeps = sweeps
        self.max_power = max_power
        self.backend = backend
        self.state = initial_posterior(box, backend=backend)

    def design(self, alpha_k: float, rng):
        return design_probe(self.state.total, alpha_k, rng, max_power=self.max_power)

    def update(self, p, z: int):
        obs = make_observation(p, z)
        self.state = posterior_update(self.state, obs, self.sweeps, self.backend)

    def estimate(self) -> np.ndarray:
        return self.state.mean


def make_learner(cfg: TrialConfig, box: PriorBox, rng: np.random.Generator):
    if cfg.method == "ep":
        return EPLearner(box, cfg.ep_sweeps, cfg.max_power)
    from .oracle import SampleLearner
    return SampleLearner(box, cfg.n_samples, rng)


@dataclass(eq=False)
class TrialRecord:
    """Per-flop trajectory of one trial.

    Row ``t`` describes probe ``t`` and the estimate after its feedback has
    been absorbed.  ``alpha_k`` is the target the probe was designed for and
    ``alpha_requested`` the policy's value (they differ only when the
    fallback target was used).  ``error`` uses the estimate clamped at zero;
    ``error_raw`` the unclamped one.
    """

    config: TrialConfig
    topology: Topology
    probes: list = field(default_factory=list)
    z: list = field(default_factory=list)
    alpha_k: list = field(default_factory=list)
    alpha_requested: list = field(default_factory=list)
    cdf_check: list = field(default_factory=list)
    estimates: list = field(default_factory=list)
    error: list = field(default_factory=list)
    error_raw: list = field(default_factory=list)
    cum_ack_ratio: list = field(default_factory=list)
    aborted: bool = False
    abort_reason: str = ""

    @property
    def n_rows(self) -> int:
        return len(self.z)

    @property
    def alpha_sim(self) -> float:
        return protection_ratio(self.z)

    def rows(self):
        for t in range(self.n_rows):
            yield {
                "flop": t,
                "p": self.probes[t],
                "z": self.z[t],
                "alpha_k": self.alpha_k[t],
                "h_hat": self.estimates[t],
                "error": self.error[t],
                "cum_ack_ratio": self.cum_ack_ratio[t],
            }


def run_trial(cfg: TrialConfig, rng: np.random.Generator,
              topology: Topology | None = None) -> TrialRecord:
    """Probe, observe and update for ``cfg.n_flops`` steps.

    The topology is drawn from ``rng`` unless one is given.  A probe design
    failure ends the trial early with ``aborted`` set on the record.
    """
    topo = generate_topology(cfg, rng) if topology is None else topology
    box = cfg.prior_box()
    policy = cfg.policy()
    learner = make_learner(cfg, box, rng)
    rec = TrialRecord(cfg, topo)
    z_sum = acks = 0
    for t in range(cfg.n_flops):
        requested = alpha_k = alpha_adapt(policy, t, z_sum)
        try:
            try:
                design = learner.design(alpha_k, rng)
            except ProbeDesignError:
                fallback = cfg.alpha_fallback
                if fallback is None or alpha_k >= fallback:
                    raise
                log.info("flop %d: target %.3g unattainable, using %.3g", t, alpha_k, fallback)
                alpha_k = fallback
                design = learner.design(alpha_k, rng)
        except EPCBALError as exc:
            rec.aborted = True
            rec.abort_reason = f"flop {t}: {exc}"
            break
        z = feedback(topo, design.p)
        learner.update(design.p, z)
        z_sum += z
        acks += z == 1
        h_hat = np.array(learner.estimate(), dtype=float)
        rec.probes.append(design.p)
        rec.z.append(z)
        rec.alpha_k.append(alpha_k)
        rec.alpha_requested.append(requested)
        rec.cdf_check.append(design.cdf_check)
        rec.estimates.append(h_hat)
        rec.error.append(estimation_error(np.maximum(h_hat, 0.0), topo.h_star))
        rec.error_raw.append(estimation_error(h_hat, topo.h_star))
        rec.cum_ack_ratio.append(acks / (t + 1))
    return rec
