#!/usr/bin/env python3
"""
Mean-field game lab: solve the consistency system on a scenario tree,
simulate finite populations and measure how fast they approach it.

Usage:
    python lab.py validate --model data/models/scalar_coupled.json
    python lab.py solve-cc --model data/models/scalar_coupled.json --depth 8
    python lab.py oracle-check --model data/models/scalar_coupled.json
    python lab.py simulate --model data/models/scalar_coupled.json --agents 64
    python lab.py nash-rates --config configs/nash_rates.yaml --gate
"""

import os
import sys
import argparse
import logging

# Make src/ importable
sys.path.insert(0, os.path.join(os.path.dirname(__file__), "src"))

from dotenv import load_dotenv
load_dotenv()

from pydantic import ValidationError

from cli.commands import COMMANDS, EXIT_IO
from cli.config import load_config
from common.errors import ModelFileError

logger = logging.getLogger(__name__)


def build_parser():
    parser = argparse.ArgumentParser(description="Projection-constrained LQ mean-field game lab.")
    parser.add_argument("command", choices=sorted(COMMANDS), help="Sub-command to run.")
    parser.add_argument("--model", dest="model_path", help="Path to the JSON model file.")
    parser.add_argument("--config", help="Experiment config file (YAML or JSON).")
    parser.add_argument("--depth", type=int, help="Scenario-tree depth n (time steps).")
    parser.add_argument("--seed", type=int, help="Master seed.")
    parser.add_argument("--output-dir", help="Directory for run artifacts.")
    parser.add_argument("--threads", type=int, help="Worker threads for the N grid and candidates.")
    parser.add_argument("--log-level", default=os.getenv("MFG_LAB_LOG_LEVEL", "INFO"),
                        help="Logging level (default: $MFG_LAB_LOG_LEVEL or INFO).")
    parser.add_argument("--permissive", action="store_true", default=None,
                        help="Validate in permissive mode (G may be only semidefinite).")
    parser.add_argument("--allow-permissive", action="store_true", default=None,
                        help="Let the solver accept permissive-only models.")
    parser.add_argument("--mode", choices=["auto", "picard_only", "continuation"], help="Solver mode.")
    parser.add_argument("--damping", type=float, help="Initial Picard damping in (0, 1].")
    parser.add_argument("--fixed-damping", action="store_true", default=None,
                        help="Keep the damping factor fixed instead of halving it on growth.")
    parser.add_argument("--picard-tol", type=float, help="Picard convergence tolerance.")
    parser.add_argument("--max-iters", type=int, help="Maximum Picard iterations per α.")
    parser.add_argument("--continuation-steps", type=int, help="Number of α steps in continuation.")
    parser.add_argument("--agents", type=int, help="Population size for simulate.")
    parser.add_argument("--replications", type=int, help="Independent replications.")
    parser.add_argument("--n-grid", help="Comma-separated population sizes for nash-rates.")
    parser.add_argument("--gate", action="store_true", default=None,
                        help="Exit with code 4 when an acceptance criterion fails.")
    parser.add_argument("--dump-tree", action="store_true", default=None,
                        help="solve-cc: also write every tree process node by node to tree.csv.")
    parser.add_argument("--no-progress", action="store_true", help="Hide progress bars.")
    return parser


def overrides_from_args(args):
    solver = {
        "mode": args.mode,
        "damping": args.damping,
        "adaptive_damping": False if args.fixed_damping else None,
        "picard_tol": args.picard_tol,
        "max_iters": args.max_iters,
        "continuation_steps": args.continuation_steps,
        "allow_permissive": args.allow_permissive,
    }
    n_grid = None
    if args.n_grid:
        n_grid = [int(part) for part in args.n_grid.split(",") if part.strip()]
    return {
        "model_path": args.model_path,
        "depth": args.depth,
        "seed": args.seed,
        "output_dir": args.output_dir,
        "threads": args.threads,
        "permissive": args.permissive,
        "agents": args.agents,
        "replications": args.replications,
        "n_grid": n_grid,
        "gate": args.gate,
        "dump_tree": args.dump_tree,
        "show_progress": False if args.no_progress else None,
        "solver": solver,
    }


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format="%(asctime)s %(levelname)s %(message)s")

    try:
        overrides = overrides_from_args(args)
        config = load_config(args.config, overrides)
    except (ModelFileError, ValidationError, ValueError) as e:
        logger.error("Invalid configuration: %s", e)
        return EXIT_IO

    code = COMMANDS[args.command](config)
    logger.info("=== %s finished with exit code %d ===", args.command, code)
    return code


if __name__ == "__main__":
    sys.exit(main())
