"""Compare the compiled and pure-Python EP sweep loops.

Builds posterior states with a realistic number of observation sites (taken
from a simulated run) and times ``run_ep`` with each backend.  Also reports
the largest relative difference between the two results.

Usage::

    python benchmarks/bench_kernels.py [--sus 5 10] [--sites 25 100] [--repeat 5]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from epcbal import ep
from epcbal.simulator import TrialConfig, run_trial


def build_state(n_sus: int, n_obs: int, seed: int = 0) -> ep.PosteriorState:
    cfg = TrialConfig(n_sus=n_sus, alpha=0.7, n_flops=max(n_obs, 1), seed=seed)
    rec = run_trial(cfg, np.random.default_rng(seed))
    state = ep.initial_posterior(cfg.prior_box())
    for p, z in zip(rec.probes, rec.z):
        state = state.with_site(ep.obs_to_halfspace(p, z), None)
    return state


def bench(n_sus: int, n_obs: int, repeat: int, sweeps: int):
    state = build_state(n_sus, n_obs)
    out = {}
    for backend in ep.available_backends():
        fn = lambda: ep.run_ep(state, sweeps, backend)  # noqa: E731
        fn()
        out[backend] = (min(timeit.repeat(fn, number=1, repeat=repeat)), fn())
    return state.n_sites, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sus", type=int, nargs="+", default=[2, 5, 10])
    ap.add_argument("--sites", type=int, nargs="+", default=[10, 50, 100])
    ap.add_argument("--sweeps", type=int, default=ep.DEFAULT_SWEEPS)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    backends = ep.available_backends()
    print(f"backends: {', '.join(backends)}; {args.sweeps} sweeps per call")
    print(f"{'N':>3} {'sites':>6} " + " ".join(f"{b + ' [ms]':>15}" for b in backends)
          + f" {'speedup':>8} {'max rel diff':>13}")
    for n in args.sus:
        for k in args.sites:
            n_sites, res = bench(n, k, args.repeat, args.sweeps)
            times = " ".join(f"{1e3 * res[b][0]:15.2f}" for b in backends)
            line = f"{n:3d} {n_sites:6d} {times}"
            if len(res) == 2:
                fast, slow = res["compiled"], res["python"]
                scale = np.max(np.abs(slow[1].total_prec))
                diff = np.max(np.abs(fast[1].total_prec - slow[1].total_prec)) / scale
                line += f" {slow[0] / fast[0]:8.1f} {diff:13.2e}"
            print(line)


if __name__ == "__main__":
    main()
