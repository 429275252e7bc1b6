"""Command-line entry point: ``epcbal [--config FILE] [overrides] --out DIR``.

Exit status is 0 on success, 1 when more than 5% of the trials of some
method aborted, 2 for invalid arguments or configuration and 3 for I/O
failures.
"""
from __future__ import annotations

import argparse
import logging
import sys

from .experiment import ExperimentConfig, load_config, run_experiment, write_outputs
from .simulator import METHODS

EXIT_OK, EXIT_INCOMPLETE, EXIT_USAGE, EXIT_IO = 0, 1, 2, 3


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="epcbal",
        description="Simulate constrained active learning of PU interference gains.")
    ap.add_argument("--config", metavar="FILE",
                    help="key=value configuration file; flags below override it")
    ap.add_argument("--sus", type=int, dest="n_sus", help="number of secondary users N")
    ap.add_argument("--alpha", type=float, help="design protection ratio in [0.5, 1)")
    ap.add_argument("--flops", type=int, dest="n_flops", help="probing horizon N_T")
    ap.add_argument("--trials", type=int, dest="n_trials", help="number of random topologies")
    ap.add_argument("--seed", type=int, help="base seed; trial i uses seed + i")
    ap.add_argument("--method", action="append", choices=METHODS, dest="methods",
                    help="learner to run; repeat for several (default: ep)")
    ap.add_argument("--out", dest="out_dir", help="output directory")
    ap.add_argument("--workers", type=int, help="parallel worker processes")
    ap.add_argument("--d-min", type=float, dest="d_min",
                    help="minimum SU-to-PU distance in metres (sets the prior box)")
    ap.add_argument("--sweeps", type=int, dest="ep_sweeps", help="EP sweeps per update")
    ap.add_argument("--samples", type=int, dest="n_samples",
                    help="particles for the mcmc-oracle learner")
    ap.add_argument("-q", "--quiet", action="store_true", help="no summary on stdout")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    base = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {k: getattr(args, k) for k in (
        "n_sus", "alpha", "n_flops", "n_trials", "seed", "out_dir", "workers",
        "d_min", "ep_sweeps", "n_samples")}
    if args.methods:
        overrides["methods"] = ",".join(dict.fromkeys(args.methods))
    return base.with_overrides(**overrides)


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except OSError as exc:
        print(f"epcbal: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError) as exc:
        print(f"epcbal: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_USAGE

    res = run_experiment(cfg)
    try:
        paths = write_outputs(res, cfg.out_dir)
    except OSError as exc:
        print(f"epcbal: {exc}", file=sys.stderr)
        return EXIT_IO

    if not args.quiet:
        for m in res.methods:
            print(f"{m}: final mean error {res.curves[m][-1]:.4g}, "
                  f"alpha_sim {res.alpha_sim[m]:.4f}, "
                  f"{res.n_completed[m]}/{cfg.n_trials} trials completed")
        print(f"wrote {', '.join(str(p) for p in paths.values())} "
              f"in {res.wall_time:.1f} s")
    if not res.complete:
        print("epcbal: aggregate incomplete: more than 5% of trials aborted",
              file=sys.stderr)
        return EXIT_INCOMPLETE
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
