"""
cnn-escape-lab: perturbed gradient descent with noise annealing for the
two-layer non-overlapping CNN teacher/student model.

Licensed under GNU General Public License 3.0 or later.

Command-line entry point:

    lab table1|trajectory|overparam|verify --config FILE [--seed N]
        [--trials N] [--out DIR] [--algorithm pgd|gd|psgd] [--tol-a X]
        [--tol-phi X] [--workers N] [--verbose]

Exit status: 0 on success, 1 if a verification claim failed, 2 on any
configuration, input or output error.
"""

import argparse
import logging
import sys

from config import EXPERIMENTS, ALGORITHMS, build_config
from errors import LabError
from lab import Lab


def parse_args(argv=None):
    parser = argparse.ArgumentParser(
        prog="lab",
        description="Noise-annealed gradient descent experiments for the "
                    "two-layer non-overlapping CNN.")
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", default=None,
                        help="key = value config file")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--trials", type=int, default=None)
    parser.add_argument("--out", dest="out_dir", default=None)
    parser.add_argument("--algorithm", choices=ALGORITHMS, default=None)
    parser.add_argument("--tol-a", dest="tol_a", type=float, default=None)
    parser.add_argument("--tol-phi", dest="tol_phi", type=float,
                        default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--verbose", action="store_true",
                        help="log per-epoch progress")

    return parser.parse_args(argv)


def main(argv=None):
    args = parse_args(argv)
    overrides = {
        'seed': args.seed,
        'trials': args.trials,
        'out_dir': args.out_dir,
        'algorithm': args.algorithm,
        'tol_a': args.tol_a,
        'tol_phi': args.tol_phi,
        'workers': args.workers}

    try:
        cfg = build_config(args.experiment, args.config, overrides)
        return Lab(cfg, args.verbose).run()

    except LabError as e:
        logging.getLogger().error(type(e).__name__ + ": " + str(e))
        return 2


if __name__ == "__main__":
    sys.exit(main())
