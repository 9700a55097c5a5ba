"""
Sub-command implementations. Each cmd_* takes an ExperimentConfig and
returns a process exit code:

    0 success, 1 validation failure, 2 IO/config error,
    3 solver divergence, 4 acceptance failure
"""

import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from pydantic import ValidationError
from rich.console import Console
from rich.table import Table
from tqdm import tqdm

from common.artifacts import write_csv, write_json, write_manifest
from common.errors import LabError, ModelFileError, ModelValidationError, SolverDivergedError
from model.spec import load_model
from model.validation import validate
from nash.best_response import best_response_gain
from nash.gaps import gap_statistics
from nash.summary import acceptance_summary
from population.backward import evaluate_backward
from population.costs import agent_cost_rows
from population.simulate import simulate_population
from solver.cc_solver import solve_cc
from solver.diagnostics import summarize
from solver.direct_linear import solve_cc_direct_linear
from tree.noise_tree import build, dump_csv

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2
EXIT_DIVERGED = 3
EXIT_ACCEPTANCE = 4

ORACLE_TOL = 1e-7


@dataclass
class RunContext:
    config: object
    model: object
    model_bytes: bytes
    tree: object
    config_hash: str
    output_dir: Path
    artifacts: list

    @property
    def stamp(self):
        return {"config_hash": self.config_hash, "seed": self.config.seed}

    def path(self, name):
        path = self.output_dir / name
        self.artifacts.append(name)
        return path


def _prepare(config):
    model, raw = load_model(config.model_path)
    tree = build(config.depth, model.T)
    output_dir = Path(config.output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    return RunContext(
        config=config,
        model=model,
        model_bytes=raw,
        tree=tree,
        config_hash=config.config_hash(raw),
        output_dir=output_dir,
        artifacts=[],
    )


def _solver_options(config):
    options = config.solver
    if config.permissive and not options.allow_permissive:
        options = options.model_copy(update={"allow_permissive": True})
    return options


def _manifest(ctx, command, extra=None):
    payload = {
        "command": command,
        "config": ctx.config.model_dump(mode="json"),
        "config_hash": ctx.config_hash,
        "seed": ctx.config.seed,
        "model_path": str(ctx.config.model_path),
        "artifacts": sorted(ctx.artifacts),
    }
    payload.update(extra or {})
    write_manifest(payload, ctx.output_dir / "run_manifest.json")


def _run(command, body, config):
    """Map known errors onto exit codes; anything else propagates."""
    try:
        return body(config)
    except (ModelFileError, ValidationError, OSError) as e:
        logger.error("%s: IO/config error: %s", command, e)
        return EXIT_IO
    except ModelValidationError as e:
        logger.error("%s: validation failed: %s", command, e)
        return EXIT_VALIDATION
    except SolverDivergedError as e:
        logger.error("%s: solver diverged: %s", command, e)
        return EXIT_DIVERGED
    except LabError as e:
        logger.error("%s: %s", command, e)
        return EXIT_IO
    except Exception:
        logger.error("%s: unexpected failure", command, exc_info=True)
        raise


def _process_columns(prefix, vector):
    return {f"{prefix}_{i}": float(v) for i, v in enumerate(vector)}


def _means_rows(tree, sol):
    rows = []
    for k in range(tree.depth + 1):
        row = {"level": k, "t": k * tree.dt}
        row.update(_process_columns("m_x", sol.m_x[k]))
        row.update(_process_columns("m_y", sol.m_y[k]))
        rows.append(row)
    return rows


def _strategy_rows(sol):
    rows = []
    for k in sol.u.levels():
        for j, value in enumerate(sol.u.at(k)):
            row = {"level": k, "path": j}
            row.update(_process_columns("u", value))
            rows.append(row)
    return rows


def _oracle_diff(sol, oracle):
    diffs = {name: getattr(sol, name).max_abs_diff(getattr(oracle, name)) for name in ("x", "y", "z", "p", "q", "kk", "u")}
    diffs["m_x"] = float(np.abs(sol.m_x - oracle.m_x).max())
    diffs["m_y"] = float(np.abs(sol.m_y - oracle.m_y).max())
    return {"max_abs_diff": max(diffs.values()), "per_process": diffs, "tolerance": ORACLE_TOL}


def _solve(ctx):
    logger.info("=== Step 1: Solving the consistency system (depth %d) ===", ctx.tree.depth)
    try:
        return solve_cc(ctx.model, ctx.tree, _solver_options(ctx.config))
    except SolverDivergedError as e:
        write_json(
            {"converged": False, "message": str(e), "residual_history": e.residual_history, "alpha_path": e.alpha_path,
             "config_hash": ctx.config_hash, "seed": ctx.config.seed},
            ctx.path("diagnostics.json"),
        )
        _manifest(ctx, "solve-cc", {"converged": False})
        raise


# ─── Commands ─────────────────────────────────────────────────────────────────

def cmd_validate(config):
    def body(config):
        ctx = _prepare(config)
        mode = "permissive" if config.permissive else "strict"
        logger.info("=== Validating %s (%s mode) ===", config.model_path, mode)
        report = validate(ctx.model, mode)
        payload = report.model_dump(mode="json")
        payload.update(config_hash=ctx.config_hash, seed=config.seed)
        write_json(payload, ctx.path("validation_report.json"))
        _manifest(ctx, "validate", {"strict_pass": report.strict_pass})
        for violation in report.violations:
            logger.warning("%s [%s]: %s", violation.field, violation.rule, violation.detail)
        return EXIT_OK if report.strict_pass else EXIT_VALIDATION

    return _run("validate", body, config)


def cmd_solve_cc(config):
    def body(config):
        ctx = _prepare(config)
        sol = _solve(ctx)
        write_csv(_means_rows(ctx.tree, sol), ctx.path("means.csv"), stamp=ctx.stamp)
        write_csv(_strategy_rows(sol), ctx.path("strategy.csv"), stamp=ctx.stamp)
        if config.dump_tree:
            processes = {"x": sol.x, "y": sol.y, "z": sol.z, "p": sol.p, "q": sol.q, "kk": sol.kk, "u": sol.u}
            dump_csv(ctx.tree, processes, ctx.path("tree.csv"), stamp=ctx.stamp)
        diagnostics = summarize(ctx.model, ctx.tree, sol, samples=config.samples, seed=config.seed)
        diagnostics.update(config_hash=ctx.config_hash, seed=config.seed)
        write_json(diagnostics, ctx.path("diagnostics.json"))

        if ctx.model.control_set.kind == "whole":
            logger.info("=== Step 2: Cross-checking against the direct linear oracle ===")
            oracle = solve_cc_direct_linear(ctx.model, ctx.tree, _solver_options(config))
            diff = _oracle_diff(sol, oracle)
            diff.update(config_hash=ctx.config_hash, seed=config.seed)
            write_json(diff, ctx.path("oracle_diff.json"))
        _manifest(ctx, "solve-cc", {"converged": True, "iterations": sol.iterations})
        return EXIT_OK

    return _run("solve-cc", body, config)


def cmd_oracle_check(config):
    def body(config):
        ctx = _prepare(config)
        sol = _solve(ctx)
        logger.info("=== Step 2: Solving the direct linear system ===")
        oracle = solve_cc_direct_linear(ctx.model, ctx.tree, _solver_options(config))
        diff = _oracle_diff(sol, oracle)
        diff.update(config_hash=ctx.config_hash, seed=config.seed)
        write_json(diff, ctx.path("oracle_diff.json"))
        passed = diff["max_abs_diff"] < ORACLE_TOL
        _manifest(ctx, "oracle-check", {"passed": passed})
        logger.info("Oracle max |Δ| = %.3e (%s)", diff["max_abs_diff"], "ok" if passed else "FAIL")
        return EXIT_OK if passed else EXIT_ACCEPTANCE

    return _run("oracle-check", body, config)


def cmd_simulate(config):
    def body(config):
        ctx = _prepare(config)
        sol = _solve(ctx)
        logger.info("=== Step 2: Simulating N=%d agents x %d replication(s) ===", config.agents, config.replications)
        run = simulate_population(ctx.model, ctx.tree, sol, config.agents, config.seed, replications=config.replications)
        logger.info("=== Step 3: Evaluating backward components ===")
        evaluate_backward(ctx.model, ctx.tree, sol, run)

        rows = []
        for r in range(run.replications):
            for k in range(ctx.tree.depth + 1):
                row = {"replication": r, "level": k, "t": k * ctx.tree.dt}
                row.update(_process_columns("x_avg", run.x_avg[r, k]))
                row.update(_process_columns("y_avg", run.y_avg[r, k]))
                rows.append(row)
        write_csv(rows, ctx.path("population.csv"), stamp=ctx.stamp)
        write_csv(agent_cost_rows(ctx.model, ctx.tree, sol, run), ctx.path("agent_costs.csv"), stamp=ctx.stamp)
        _manifest(ctx, "simulate", {"agents": config.agents, "replications": config.replications})
        return EXIT_OK

    return _run("simulate", body, config)


def _print_table(gap_table, nash_rows):
    table = Table(title="Gap statistics and best-response gains")
    for column in ("N", "gap_x_avg", "gap_y_avg", "gap_x_indiv", "gap_y_indiv", "cost_gap", "cost_disp", "ε̂", "noise floor"):
        table.add_column(column, justify="right")
    by_n = {row.N: row for row in nash_rows}
    for row in gap_table.rows:
        nash = by_n.get(row.N)
        table.add_row(
            str(row.N),
            f"{row.gap_x_avg:.3e}",
            f"{row.gap_y_avg:.3e}",
            f"{row.gap_x_indiv:.3e}",
            f"{row.gap_y_indiv:.3e}",
            f"{row.cost_gap:.3e}",
            f"{row.cost_dispersion:.3e}",
            f"{nash.epsilon:.3e}" if nash else "-",
            f"{nash.noise_floor:.3e}" if nash else "-",
        )
    Console().print(table)


def cmd_nash_rates(config):
    def body(config):
        ctx = _prepare(config)
        sol = _solve(ctx)

        logger.info("=== Step 2: Gap statistics over N=%s ===", config.n_grid)
        gap_table = gap_statistics(
            ctx.model, ctx.tree, sol, config.n_grid, config.replications, config.seed,
            threads=config.threads, show_progress=config.show_progress,
        )

        logger.info("=== Step 3: Best-response gains ===")
        nash_rows = [
            best_response_gain(
                ctx.model, ctx.tree, sol, N, config.candidates, config.replications, config.seed,
                threads=config.threads, opts=_solver_options(config),
            )
            for N in tqdm(config.n_grid, desc="Best response", disable=not config.show_progress)
        ]

        write_csv([row.model_dump() for row in gap_table.rows], ctx.path("gap_table.csv"), stamp=ctx.stamp)
        write_csv([row.model_dump() for row in nash_rows], ctx.path("nash_report.csv"), stamp=ctx.stamp)
        summary = acceptance_summary(gap_table, nash_rows)
        summary.update(
            candidate_family=config.candidates.describe(),
            config_hash=ctx.config_hash,
            seed=config.seed,
        )
        write_json(summary, ctx.path("summary.json"))
        _manifest(ctx, "nash-rates", {"passed": summary["passed"]})
        _print_table(gap_table, nash_rows)

        if config.gate and not summary["passed"]:
            logger.error("Acceptance gate failed")
            return EXIT_ACCEPTANCE
        return EXIT_OK

    return _run("nash-rates", body, config)


COMMANDS = {
    "validate": cmd_validate,
    "solve-cc": cmd_solve_cc,
    "oracle-check": cmd_oracle_check,
    "simulate": cmd_simulate,
    "nash-rates": cmd_nash_rates,
}
