"""Command-line front end: optimize, sweep, simulate and validate experiments.

Results are written as CSV (comma separated, header row, UTF-8, LF) with a
fixed column order shared by all subcommands; columns a command does not
produce are left empty. Floats carry 15 significant digits. Category
labels in the output are 1-based.

Exit status: 0 success, 2 configuration error, 3 infeasible problem,
4 validation failure (|z| > 3).
"""
from __future__ import annotations

import argparse
import csv
import io
import logging
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor

from .allocator import Evaluator, baseline_l1, greedy_allocate
from .analytics import expected_hit_prob, expected_length
from .config import ConfigError, ExperimentConfig, load_config
from .errors import InfeasibleError
from .simulator import SimReport, estimate, write_trace_dump

log = logging.getLogger("seqcache")

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_VALIDATION = 0, 2, 3, 4
Z_LIMIT = 3.0

HEAD_COLUMNS = [
    "experiment_id", "point", "command", "sweep_param", "sweep_value", "case", "K", "M",
    "epsilon", "lambda", "radius", "gamma", "gamma_out", "objective", "mode",
]
TAIL_COLUMNS = [
    "sweeps", "objective_value", "hit_paper", "hit_consistent", "exp_length",
    "l1_hit_paper", "l1_hit_consistent", "l1_exp_length",
    "sim_sessions", "sim_all_hit", "sim_all_hit_se", "sim_mean_length", "sim_mean_length_se",
    "z_hit", "z_length",
]


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return str(int(value))
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return f"{value:.15g}"
    return str(value)


def columns_for(K: int, timing: bool = False) -> list[str]:
    cols = HEAD_COLUMNS + [f"alpha_{i + 1}" for i in range(K)] + TAIL_COLUMNS
    return cols + ["wall_time"] if timing else cols


def optimize_point(cfg: ExperimentConfig) -> dict:
    """Allocate for one configuration and evaluate every analytic column."""
    problem = cfg.problem()
    evaluator = Evaluator(problem)
    result = greedy_allocate(problem, cfg.allocator_config(), evaluator=evaluator)
    terms = evaluator.terms(result.alpha.alpha)
    req, f = problem.request, problem.f
    l1 = baseline_l1(problem)
    row = {
        "case": cfg.case, "K": problem.library.K, "M": problem.M, "epsilon": cfg.epsilon,
        "lambda": cfg.lam if cfg.network_kind == "poisson-disk" else None,
        "radius": cfg.radius if cfg.network_kind == "poisson-disk" else None,
        "gamma": cfg.gamma, "gamma_out": cfg.gamma_out,
        "objective": cfg.objective, "mode": cfg.mode,
        "sweeps": result.sweeps_used, "objective_value": result.objective_value,
        "hit_paper": expected_hit_prob(terms, f, req, "paper"),
        "hit_consistent": expected_hit_prob(terms, f, req, "consistent"),
        "exp_length": expected_length(terms, f, req),
        "l1_hit_paper": l1.hit_paper, "l1_hit_consistent": l1.hit_consistent,
        "l1_exp_length": l1.length,
    }
    for i, a in enumerate(result.alpha.alpha):
        row[f"alpha_{i + 1}"] = a
    return {"row": row, "result": result}


def add_sim_columns(row: dict, report: SimReport) -> None:
    row.update({
        "sim_sessions": report.sessions,
        "sim_all_hit": report.all_hit_rate, "sim_all_hit_se": report.all_hit_se,
        "sim_mean_length": report.mean_length, "sim_mean_length_se": report.mean_length_se,
    })


def z_score(analytic: float, empirical: float, se: float) -> float:
    if se == 0:
        return 0.0 if abs(analytic - empirical) <= 1e-12 else math.inf
    return (empirical - analytic) / se


def _sweep_job(args):
    cfg, point_index, value, simulate = args
    start = time.perf_counter()
    point = cfg.with_value(cfg.sweep_param, value)
    out = optimize_point(point)
    row = out["row"]
    row.update({"point": point_index, "sweep_param": cfg.sweep_param, "sweep_value": value})
    if simulate:
        problem = point.problem()
        report = estimate(point.sim_config(), problem.library, problem.request,
                          problem.network, out["result"].policy)
        add_sim_columns(row, report)
    row["wall_time"] = time.perf_counter() - start
    return row


def run_optimize(cfg: ExperimentConfig) -> list[dict]:
    start = time.perf_counter()
    out = optimize_point(cfg)
    row = out["row"]
    row.update({"point": 0, "command": "optimize"})
    row["wall_time"] = time.perf_counter() - start
    return [row]


def run_sweep(cfg: ExperimentConfig, workers: int = 1, simulate: bool = False) -> list[dict]:
    if cfg.sweep_param is None:
        raise ConfigError("sweep needs a [sweep] section with parameter and values")
    jobs = [(cfg, i, v, simulate) for i, v in enumerate(cfg.sweep_points())]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(workers) as pool:
            rows = list(pool.map(_sweep_job, jobs))
    else:
        rows = [_sweep_job(job) for job in jobs]
    for row in rows:
        row["command"] = "sweep"
    return rows


def run_simulate(cfg: ExperimentConfig, workers: int = 1,
                 outside_default: str = "exact-mzipf") -> tuple[list[dict], SimReport]:
    start = time.perf_counter()
    out = optimize_point(cfg)
    problem = cfg.problem()
    report = estimate(cfg.sim_config(outside_default, workers), problem.library,
                      problem.request, problem.network, out["result"].policy)
    row = out["row"]
    row.update({"point": 0, "command": "simulate"})
    add_sim_columns(row, report)
    if cfg.trace_path:
        write_trace_dump(cfg.trace_path, report.traces)
    row["wall_time"] = time.perf_counter() - start
    return [row], report


def run_validate(cfg: ExperimentConfig, workers: int = 1) -> tuple[list[dict], bool]:
    """Optimize, simulate, and compare the empirical metrics with the consistent closed forms."""
    rows, report = run_simulate(cfg, workers, outside_default="uniform-approx")
    row = rows[0]
    row["command"] = "validate"
    row["z_hit"] = z_score(row["hit_consistent"], report.all_hit_rate, report.all_hit_se)
    row["z_length"] = z_score(row["exp_length"], report.mean_length, report.mean_length_se)
    ok = abs(row["z_hit"]) <= Z_LIMIT and abs(row["z_length"]) <= Z_LIMIT
    return rows, ok


def write_rows(rows: list[dict], K: int, stream, timing: bool = False) -> None:
    cols = columns_for(K, timing)
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(cols)
    for row in rows:
        writer.writerow([fmt(row.get(c)) for c in cols])


def render_csv(rows: list[dict], K: int, timing: bool = False) -> str:
    buf = io.StringIO()
    write_rows(rows, K, buf, timing)
    return buf.getvalue()


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="experiment config file (INI)")
    common.add_argument("--seed", type=int, help="simulation seed (overrides the config)")
    common.add_argument("--out", help="CSV output path (default: config output.path or stdout)")
    common.add_argument("--workers", type=int, default=1, help="worker processes")
    common.add_argument("--objective", choices=["hit", "length"])
    common.add_argument("--mode", choices=["paper", "consistent"])
    common.add_argument("--timing", action="store_true", help="append a wall_time column")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="seqcache", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("optimize", parents=[common], help="allocate cache shares for one config")
    sw = sub.add_parser("sweep", parents=[common], help="optimize over a parameter sweep")
    sw.add_argument("--simulate", action="store_true", help="also simulate every sweep point")
    sim = sub.add_parser("simulate", parents=[common], help="optimize, then Monte Carlo")
    sim.add_argument("--trace", help="write a per-session trace dump")
    sim.add_argument("--sessions", type=int, help="number of simulated sessions")
    val = sub.add_parser("validate", parents=[common],
                         help="check Monte Carlo against closed forms (3 sigma)")
    val.add_argument("--sessions", type=int, help="number of simulated sessions")
    return parser


def _resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.objective:
        changes["objective"] = args.objective
    if args.mode:
        changes["mode"] = args.mode
    if getattr(args, "trace", None):
        changes["trace_path"] = args.trace
    if getattr(args, "sessions", None):
        changes["n_sessions"] = args.sessions
    if args.out:
        changes["out_path"] = args.out
    return cfg.replace(**changes) if changes else cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.workers < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = _resolve_config(args)
        ok = True
        if args.command == "optimize":
            rows = run_optimize(cfg)
        elif args.command == "sweep":
            rows = run_sweep(cfg, args.workers, simulate=args.simulate or cfg.simulate)
        elif args.command == "simulate":
            rows, _ = run_simulate(cfg, args.workers)
        else:
            rows, ok = run_validate(cfg, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE

    for row in rows:
        row["experiment_id"] = cfg.experiment_id
    K = len(cfg.category_sizes)
    text = render_csv(rows, K, args.timing)
    summary = sys.stderr if cfg.out_path is None else sys.stdout
    if cfg.out_path is None:
        sys.stdout.write(text)
    else:
        with open(cfg.out_path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    for row in rows:
        alpha = [row[f"alpha_{i + 1}"] for i in range(K)]
        line = f"alpha={alpha} objective={row['objective_value']:.10g}"
        if row.get("sweep_param"):
            line = f"{row['sweep_param']}={row['sweep_value']} " + line
        print(line, file=summary)
    if args.command == "validate":
        row = rows[0]
        print(f"hit:    analytic={row['hit_consistent']:.6f} empirical={row['sim_all_hit']:.6f} "
              f"z={row['z_hit']:+.2f}", file=summary)
        print(f"length: analytic={row['exp_length']:.6f} empirical={row['sim_mean_length']:.6f} "
              f"z={row['z_length']:+.2f}", file=summary)
        print("PASS" if ok else "FAIL", file=summary)
        if not ok:
            return EXIT_VALIDATION
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
