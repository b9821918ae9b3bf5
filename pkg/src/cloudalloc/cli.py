"""Command-line interface.

Exit codes: 0 success, 1 error (bad input, missing file, uncertified KKT
check), 2 infeasible problem, 3 some scenario failed.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import os
import sys
import tempfile
import time
from dataclasses import replace
from typing import Optional

import numpy as np

from . import __version__
from .ca_sim import CaError, load_pools, run_baseline
from .catalog import CatalogError, bundled_catalog, load_catalog, save_catalog, synth_catalog
from .kkt import kkt_report
from .metrics import evaluate
from .model import AllocationProblem, PenaltyParams, ProblemError, load_problem
from .scenarios import (
    PARAM_NAMES,
    RunOptions,
    ScenarioError,
    ScenarioFailed,
    builtin_scenarios,
    grid_search,
    load_scenario,
    pareto_frontier,
    run_comparison,
    scaling_sweep,
    sensitivity,
)
from .solver_continuous import BarrierSettings, InfeasibleProblem, multi_start
from .solver_integer import SearchBudget, SearchExhausted, solve_integer

log = logging.getLogger("cloudalloc")

EXIT_OK, EXIT_ERROR, EXIT_INFEASIBLE, EXIT_PARTIAL = 0, 1, 2, 3
DEFAULT_SOLVE_SECS = 10.0
SUMMARY_COLUMNS = ("scenario", "strategy", "cost", "mean_utilization", "diversity", "fragmentation",
                   "mean_overprovision_pct")
SWEEP_COLUMNS = PARAM_NAMES + ("status", "detail", "total_cost", "objective", "mean_utilization",
                               "instance_diversity", "provider_fragmentation", "mean_overprovision_pct",
                               "baseline_cost", "cost_savings_pct")


class UsageError(Exception):
    pass


def load_schema(name: str) -> dict:
    """A published JSON Schema shipped with the package, e.g. ``load_schema("solve_report")``."""
    from importlib import resources
    return json.loads((resources.files("cloudalloc") / "schemas" / f"{name}.schema.json").read_text("utf-8"))


# --- output helpers -----------------------------------------------------------

def _atomic_write(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=".tmp-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _metadata(started: float, **timings) -> dict:
    return {
        "generated_at": _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
        "version": __version__,
        "wall_secs": time.perf_counter() - started,
        "timings": timings,
    }


def _json_text(payload: dict) -> str:
    return json.dumps(payload, indent=2, allow_nan=False) + "\n"


def _emit(path: Optional[str], text: str) -> None:
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        _atomic_write(path, text)


def _csv_text(columns, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if r.get(c) is None else r.get(c) for c in columns])
    return buf.getvalue()


def _error(kind: str, message: str, **detail) -> None:
    sys.stderr.write(json.dumps({"error": {"kind": kind, "message": message, **detail}}) + "\n")


# --- shared argument handling ---------------------------------------------------------

def _common(p: argparse.ArgumentParser, out_default=None) -> None:
    p.add_argument("--catalog", help="catalog CSV/JSON (default: bundled synthetic catalog)")
    p.add_argument("--out", default=out_default, help="output file or directory")
    p.add_argument("--seed", type=int, default=42)
    for name in PARAM_NAMES:
        p.add_argument(f"--{name}", type=float, default=None, help=f"override {name}")
    p.add_argument("--starts", type=int, default=4, help="multi-start count for the relaxation")
    p.add_argument("--node-budget", type=int, default=None, help="branch-and-bound node limit")
    p.add_argument("--time-budget-secs", type=float, default=None,
                   help="branch-and-bound time limit (makes results timing dependent)")
    p.add_argument("--expander", choices=("least-waste", "random", "priority"), default="least-waste")
    p.add_argument("--format", choices=("json", "csv"), default=None,
                   help="output format (default: from the --out extension, else json)")
    p.add_argument("-v", "--verbose", action="store_true")


def _format(args) -> str:
    if args.format:
        return args.format
    return "csv" if args.out and args.out.lower().endswith(".csv") else "json"


def _catalog(args):
    return load_catalog(args.catalog) if args.catalog else bundled_catalog()


def _params(args, base: PenaltyParams | None = None) -> PenaltyParams:
    base = base or PenaltyParams()
    over = {n: getattr(args, n) for n in PARAM_NAMES if getattr(args, n) is not None}
    return replace(base, **over)


def _options(args, default_nodes: Optional[int]) -> RunOptions:
    return RunOptions(
        expander=args.expander.replace("-", "_"),
        starts=args.starts,
        node_budget=args.node_budget if args.node_budget is not None else default_nodes,
        time_budget=args.time_budget_secs,
    )


def _problem(args):
    if not args.problem:
        raise UsageError("--problem is required")
    catalog = _catalog(args) if args.catalog else None
    prob = load_problem(args.problem, catalog)
    return prob.with_params(_params(args, prob.params))


def _scenario(args, catalog):
    if args.scenario:
        return load_scenario(catalog, args.scenario)
    names = {s.name: s for s in builtin_scenarios(catalog)}
    if args.builtin not in names:
        raise UsageError(f"unknown built-in scenario {args.builtin!r}; choose from {', '.join(names)}")
    return names[args.builtin]


# --- commands ---------------------------------------------------------------------------

def cmd_solve(args) -> int:
    started = time.perf_counter()
    prob = _problem(args)
    settings = BarrierSettings()
    t0 = time.perf_counter()
    # time-limited by default; a node budget alone keeps the run reproducible
    limit = args.time_budget_secs
    if limit is None and args.node_budget is None:
        limit = DEFAULT_SOLVE_SECS
    budget = SearchBudget(time_limit=limit)
    if args.node_budget is not None:
        budget = replace(budget, max_nodes=args.node_budget)
    sol = solve_integer(prob, settings, budget)
    t_integer = time.perf_counter() - t0
    t0 = time.perf_counter()
    relaxed = multi_start(prob, settings, starts=args.starts, seed=args.seed)
    t_relaxed = time.perf_counter() - t0
    kkt = kkt_report(prob, relaxed.x_star, relaxed.multipliers)
    metrics = evaluate(prob.catalog, prob, sol.x_hat)
    report = {
        "allocation": sol.x_hat.counts.tolist(),
        "instances": [{"provider": prob.catalog.instances[i].provider_id, "sku": prob.catalog.instances[i].sku,
                       "count": int(sol.x_hat.counts[i])} for i in np.flatnonzero(sol.x_hat.counts)],
        "breakdown": sol.breakdown.as_dict(),
        "bound_gap": sol.as_dict()["bound_gap"],
        "integer": sol.as_dict(),
        "relaxed": {
            "x_star": relaxed.x_star.counts.tolist(),
            "value": relaxed.value,
            "converged": relaxed.converged,
            "mode": relaxed.mode,
            "multipliers": relaxed.multipliers.as_dict(),
        },
        "kkt": kkt.as_dict(),
        "metrics": metrics.as_dict(),
        "params": prob.params.as_dict(),
        "seed": args.seed,
        "metadata": _metadata(started, relaxed_secs=t_relaxed, integer_secs=t_integer),
    }
    if _format(args) == "csv":
        _emit(args.out, _csv_text(("provider", "sku", "count"), report["instances"]))
    else:
        _emit(args.out, _json_text(report))
    return EXIT_OK


def cmd_simulate_ca(args) -> int:
    started = time.perf_counter()
    catalog = _catalog(args)
    pools = load_pools(catalog, args.pools)
    if args.demand:
        demand = [float(v) for v in args.demand.split(",")]
        prob = AllocationProblem(catalog, demand)
        existing = None
    else:
        prob = _problem(args)
        catalog, existing = prob.catalog, prob.current
    priority = [int(v) for v in args.priority.split(",")] if args.priority else None
    res = run_baseline(catalog, pools, existing, prob.demand, args.expander.replace("-", "_"), args.seed, priority,
                       args.threshold)
    report = {**res.as_dict(catalog), "metrics": evaluate(catalog, prob, res.allocation).as_dict(),
              "metadata": _metadata(started)}
    if _format(args) == "csv":
        _emit(args.out, _csv_text(("instance_sku", "provider", "min_nodes", "max_nodes", "current_nodes"),
                                  report["pools"]))
    else:
        _emit(args.out, _json_text(report))
    return EXIT_OK if res.satisfied else EXIT_INFEASIBLE


def _summary_rows(rep) -> list:
    out = []
    for strategy, m in (("cluster_autoscaler", rep.baseline), ("optimizer", rep.optimized)):
        d = m.as_dict()
        out.append({"scenario": rep.scenario, "strategy": strategy, "cost": d["total_cost"],
                    "mean_utilization": d["mean_utilization"], "diversity": d["instance_diversity"],
                    "fragmentation": d["provider_fragmentation"],
                    "mean_overprovision_pct": d["mean_overprovision_pct"]})
    return out


def cmd_compare(args) -> int:
    started = time.perf_counter()
    catalog = _catalog(args)
    scen = _scenario(args, catalog)
    if args.repetitions is not None:
        scen = replace(scen, repetitions=args.repetitions)
    rep = run_comparison(scen, catalog, _params(args), args.seed, _options(args, 2000))
    if _format(args) == "csv":
        _emit(args.out, _csv_text(SUMMARY_COLUMNS, _summary_rows(rep)))
    else:
        _emit(args.out, _json_text({**rep.as_dict(), "metadata": _metadata(started, **rep.timings)}))
    if args.out and args.out != "-" and not args.no_figures:
        from . import plotting
        base = os.path.splitext(args.out)[0]
        plotting.radar(rep.radar["baseline"], rep.radar["optimized"], base + "_radar.png", rep.scenario)
    return EXIT_OK


def cmd_scenarios(args) -> int:
    started = time.perf_counter()
    catalog = _catalog(args)
    params = _params(args)
    options = _options(args, 400)
    out = args.out
    os.makedirs(out, exist_ok=True)
    scenarios = builtin_scenarios(catalog, repetitions=args.repetitions)
    summary, figure_rows, failed = [], [], []
    for scen in scenarios:
        t0 = time.perf_counter()
        try:
            rep = run_comparison(scen, catalog, params, args.seed, options)
        except ScenarioFailed as exc:
            log.error("%s", exc)
            failed.append({"scenario": scen.name, "error": str(exc.cause)})
            _atomic_write(os.path.join(out, f"scenario_{scen.name}.json"),
                          _json_text({"scenario": scen.name, "status": "failed", "error": str(exc.cause),
                                      "metadata": _metadata(t0)}))
            continue
        _atomic_write(os.path.join(out, f"scenario_{scen.name}.json"),
                      _json_text({**rep.as_dict(), "metadata": _metadata(t0, **rep.timings)}))
        summary.extend(_summary_rows(rep))
        figure_rows.append({"scenario": scen.name, "ca_cost": rep.baseline.total_cost,
                            "optimizer_cost": rep.optimized.total_cost})
        if not args.no_figures:
            from . import plotting
            plotting.radar(rep.radar["baseline"], rep.radar["optimized"],
                           os.path.join(out, f"radar_{scen.name}.png"), scen.name)
    _atomic_write(os.path.join(out, "summary.csv"), _csv_text(SUMMARY_COLUMNS, summary))
    factors = [float(v) for v in args.scaling_factors.split(",")] if args.scaling_factors else []
    scale_rows = []
    if factors:
        try:
            scale_rows = scaling_sweep(scenarios[0], catalog, factors, params, args.seed, options)
        except ScenarioFailed as exc:
            failed.append({"scenario": "scaling", "error": str(exc.cause)})
        _atomic_write(os.path.join(out, "scaling.csv"),
                      _csv_text(("factor", "ca_cost", "optimizer_cost", "cost_gap", "integer_status"), scale_rows))
    if not args.no_figures:
        from . import plotting
        if figure_rows:
            plotting.cost_comparison(figure_rows, os.path.join(out, "cost_comparison.png"))
        if scale_rows:
            plotting.scaling(scale_rows, os.path.join(out, "scaling.png"))
    _atomic_write(os.path.join(out, "run.json"),
                  _json_text({"scenarios": [s.name for s in scenarios], "failed": failed, "seed": args.seed,
                              "params": params.as_dict(), "metadata": _metadata(started)}))
    return EXIT_PARTIAL if failed else EXIT_OK


def _parse_grid(args) -> dict:
    if args.grid_file:
        with open(args.grid_file, encoding="utf-8") as fh:
            return json.load(fh)
    grid = {}
    for part in filter(None, (args.grid or "").split(";")):
        name, _, values = part.partition("=")
        grid[name.strip()] = [float(v) for v in values.split(",") if v.strip()]
    if not grid:
        raise UsageError("give --grid 'alpha=0,0.05;gamma=0.01' or --grid-file")
    return grid


def cmd_sweep(args) -> int:
    catalog = _catalog(args)
    scen = _scenario(args, catalog)
    options = _options(args, 400)
    table = grid_search(scen, catalog, _parse_grid(args), _params(args), args.seed, options)
    out = args.out or "sweep.csv"
    _atomic_write(out, _csv_text(SWEEP_COLUMNS, table))
    objectives = tuple(args.objectives.split(","))
    frontier = pareto_frontier(table, objectives)
    base = os.path.splitext(out)[0]
    _atomic_write(base + "_frontier.csv", _csv_text(SWEEP_COLUMNS, frontier))
    if args.sensitivity:
        rows = sensitivity(scen, catalog, _params(args), args.sensitivity, args.seed, options)
        _atomic_write(base + "_sensitivity.csv",
                      _csv_text(("parameter", "value", "cost_elasticity", "objective_elasticity", "note"), rows))
    if not args.no_figures:
        from . import plotting
        plotting.tradeoff(table, frontier, objectives, base + "_frontier.png")
    return EXIT_OK


def _parse_cell(v: str):
    if v == "":
        return None
    try:
        return float(v)
    except ValueError:
        return v


def _read_table(path: str) -> tuple:
    """Raw rows as read plus numeric copies for comparison."""
    with open(path, encoding="utf-8", newline="") as fh:
        raw = list(csv.DictReader(fh))
    return raw, [{k: _parse_cell(v) for k, v in r.items()} for r in raw]


def cmd_pareto(args) -> int:
    raw, table = _read_table(args.table)
    objectives = tuple(args.objectives.split(","))
    frontier = pareto_frontier(table, objectives)
    # write the source text of each kept row so values round-trip unchanged
    index = {id(r): k for k, r in enumerate(table)}
    columns = list(raw[0].keys()) if raw else list(SWEEP_COLUMNS)
    out = args.out or os.path.splitext(args.table)[0] + "_frontier.csv"
    _atomic_write(out, _csv_text(columns, [raw[index[id(r)]] for r in frontier]))
    if not args.no_figures:
        from . import plotting
        plotting.tradeoff(table, frontier, objectives, os.path.splitext(out)[0] + ".png")
    return EXIT_OK


def cmd_kkt_check(args) -> int:
    started = time.perf_counter()
    prob = _problem(args)
    sol = multi_start(prob, BarrierSettings(), starts=args.starts, seed=args.seed)
    rep = kkt_report(prob, sol.x_star, sol.multipliers)
    ok = rep.within(args.stationarity_tol, args.primal_tol, args.comp_slack_tol)
    _emit(args.out, _json_text({"certified": ok, "convex": prob.params.alpha == 0, "x_star": sol.x_star.counts.tolist(),
                                "kkt": rep.as_dict(), "metadata": _metadata(started)}))
    return EXIT_OK if ok else EXIT_ERROR


def cmd_synth_catalog(args) -> int:
    cat = synth_catalog(args.seed, args.n, args.p)
    if not args.out:
        raise UsageError("--out is required")
    save_catalog(cat, args.out, _format(args))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cloudalloc", description="Heterogeneous cloud allocation optimizer "
                                     "and Cluster Autoscaler baseline.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve an integer allocation problem")
    _common(p)
    p.add_argument("--problem", required=True)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate-ca", help="run the Cluster Autoscaler baseline on a pool fixture")
    _common(p)
    p.add_argument("--pools", required=True)
    p.add_argument("--problem")
    p.add_argument("--demand", help="comma-separated demand vector (instead of --problem)")
    p.add_argument("--priority", help="pool indices for the priority expander, most preferred first")
    p.add_argument("--threshold", type=float, default=0.5, help="scale-down utilization threshold")
    p.set_defaults(func=cmd_simulate_ca)

    for name, func, help_ in (("compare", cmd_compare, "compare optimizer and CA on one scenario"),
                              ("sweep", cmd_sweep, "grid search over penalty parameters")):
        p = sub.add_parser(name, help=help_)
        _common(p)
        g = p.add_mutually_exclusive_group()
        g.add_argument("--scenario", help="scenario fixture JSON")
        g.add_argument("--builtin", default="S1", help="built-in scenario name (default S1)")
        p.add_argument("--no-figures", action="store_true")
        p.set_defaults(func=func)
        if name == "compare":
            p.add_argument("--repetitions", type=int)
        else:
            p.add_argument("--grid", help="e.g. 'alpha=0,0.05,0.5;gamma=0,0.01'")
            p.add_argument("--grid-file", help="JSON object mapping parameter to values")
            p.add_argument("--objectives", default="total_cost,provider_fragmentation")
            p.add_argument("--sensitivity", type=float, help="also write elasticities at this perturbation")

    p = sub.add_parser("scenarios", help="run all five built-in scenarios")
    _common(p, out_default="scenarios_out")
    p.add_argument("--repetitions", type=int, default=5)
    p.add_argument("--scaling-factors", default="1,2,4,8", help="S1 demand multipliers ('' to skip)")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_scenarios)

    p = sub.add_parser("pareto", help="non-dominated rows of a sweep table")
    _common(p)
    p.add_argument("--table", required=True)
    p.add_argument("--objectives", default="total_cost,provider_fragmentation")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_pareto)

    p = sub.add_parser("kkt-check", help="certify the relaxed optimum with KKT residuals")
    _common(p)
    p.add_argument("--problem", required=True)
    p.add_argument("--stationarity-tol", type=float, default=1e-4)
    p.add_argument("--primal-tol", type=float, default=1e-8)
    p.add_argument("--comp-slack-tol", type=float, default=1e-4)
    p.set_defaults(func=cmd_kkt_check)

    p = sub.add_parser("synth-catalog", help="write a seeded synthetic catalog")
    _common(p)
    p.add_argument("--n", type=int, default=36)
    p.add_argument("--p", type=int, default=2)
    p.set_defaults(func=cmd_synth_catalog)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except InfeasibleProblem as exc:
        _error("infeasible", str(exc), violation=exc.violation if np.isfinite(exc.violation) else None,
               constraint=exc.constraint)
        return EXIT_INFEASIBLE
    except ScenarioFailed as exc:
        if isinstance(exc.cause, InfeasibleProblem):
            _error("infeasible", str(exc), scenario=exc.scenario)
            return EXIT_INFEASIBLE
        _error("error", str(exc), scenario=exc.scenario)
        return EXIT_ERROR
    except SearchExhausted as exc:
        _error("budget_exhausted", str(exc))
        return EXIT_ERROR
    except FileNotFoundError as exc:
        _error("missing_file", str(exc), path=exc.filename)
        return EXIT_ERROR
    except (UsageError, CatalogError, ProblemError, CaError, ScenarioError, ValueError, OSError) as exc:
        _error(type(exc).__name__, str(exc))
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
