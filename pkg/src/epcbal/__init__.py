"""Constrained Bayesian active learning of interference gains with EP.

Modules
-------
truncated
    Gaussian moments truncated to a halfspace.
ep
    Expectation propagation over box-face and observation halfspace sites.
    The sweep loop runs in a compiled kernel when available, otherwise in
    pure Python (``EPCBAL_PURE_PYTHON=1`` forces the latter).
policy
    Adaptive design ratio and random-direction probe design.
simulator
    Cognitive-radio topologies and the probe/feedback/update loop.
oracle
    Sampling ground truth for the polytope posterior and the sample-based
    comparator learner.
experiment
    Batch runs, aggregation and CSV output; ``epcbal`` on the command line.
"""
from .ep import BACKEND, PriorBox, initial_posterior, posterior_update, run_ep
from .errors import EPCBALError
from .experiment import ExperimentConfig, run_experiment, write_outputs
from .policy import PolicyConfig, alpha_adapt, design_probe
from .simulator import TrialConfig, run_trial
from .truncated import Gaussian, Halfspace, truncated_moments_halfspace

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "EPCBALError", "ExperimentConfig", "Gaussian", "Halfspace",
    "PolicyConfig", "PriorBox", "TrialConfig", "alpha_adapt", "design_probe",
    "initial_posterior", "posterior_update", "run_ep", "run_experiment", "run_trial",
    "truncated_moments_halfspace", "write_outputs",
]
