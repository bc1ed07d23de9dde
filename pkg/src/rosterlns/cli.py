"""Command-line interface: solve, cost, validate and bench.

Exit codes: 0 success, 1 roster violates hard constraints (validate only),
2 unreadable or malformed input, 3 no feasible roster, 4 bad flags,
5 roster and instance dimensions disagree.

Diagnostics go to stderr and are controlled by ``ROSTER_LNS_LOG``
(``info`` or ``trace``); stdout carries only CSV data.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import os
import sys
from dataclasses import replace
from decimal import Decimal
from fractions import Fraction
from pathlib import Path

from . import bundled_instance_path
from .instance import DimensionMismatch, InstanceError, Instance, load_instance, load_roster, validate_roster
from .lns import LnsConfig, RunResult, Strategy, prepare_model, run_lns
from .penalty import IncompleteRoster, roster_cost
from .search import (
    Budget,
    Heuristic,
    ImproveRule,
    Infeasible,
    ValueOrder,
    construct_initial,
    reoptimize,
)

log = logging.getLogger("rosterlns")

EXIT_OK, EXIT_HARD, EXIT_INPUT, EXIT_INFEASIBLE, EXIT_FLAGS, EXIT_DIMENSIONS = 0, 1, 2, 3, 4, 5

FIXED_WINDOW_LENGTHS = (4, 7, 14)
HEURISTICS_NODES = 100_000
OVERLAP_LENGTHS = (7, 11, 13, 15)


class FlagError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise FlagError(message)


def _setup_logging() -> None:
    level = os.environ.get("ROSTER_LNS_LOG", "").strip().lower()
    if not level or log.handlers:
        return
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
    log.addHandler(handler)
    log.setLevel(logging.DEBUG if level == "trace" else logging.INFO)


# ---------------------------------------------------------------------------
# Formatting helpers
# ---------------------------------------------------------------------------

def format_mean(values) -> str:
    """Arithmetic mean with two decimals, ties rounded to even."""
    values = list(values)
    mean = round(Fraction(sum(values), len(values)), 2)
    return str((Decimal(mean.numerator) / Decimal(mean.denominator)).quantize(Decimal("0.01")))


def _csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerows(rows)
    return buf.getvalue()


def _write(out: Path | None, name: str, text: str) -> None:
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / name).write_text(text, encoding="utf-8")


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------

def _add_lns_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("instance", nargs="?", help="instance file (default: the bundled instance)")
    p.add_argument("--strategy", choices=[s.value for s in Strategy], default="fixed")
    p.add_argument("--window", type=int, default=7, help="window length L in days")
    p.add_argument("--stride", type=int, default=7, help="window stride in days (overlap)")
    p.add_argument("--rows", type=int, default=2, help="rows q eligible for the propagation strategy")
    p.add_argument("--size", type=int, default=21, help="fragment size s for the propagation strategy")
    p.add_argument("--list-cap", type=int, default=7, help="variable list capacity (propagation)")
    p.add_argument("--heuristic", choices=[h.value for h in Heuristic], default="MinSizeInt")
    p.add_argument("--improve", choices=["first", "best"], default="best")
    p.add_argument("--value-order", choices=[v.value for v in ValueOrder], default=ValueOrder.PRICED.value)
    p.add_argument("--iters", type=int, default=4, help="number of sweeps")
    p.add_argument("--nodes", type=int, default=None,
                   help=f"minimum choice points per re-optimization, raised to "
                        f"{LnsConfig.nodes_per_cell} per relaxed cell (default {LnsConfig.node_limit}; "
                        f"{HEURISTICS_NODES} for the heuristics suite)")
    p.add_argument("--time-limit", type=float, default=None, help="CPU seconds per run")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--reps", type=int, default=None, help="repetitions with seeds seed..seed+reps-1")
    p.add_argument("--out", type=Path, default=None, help="directory for CSV and roster files")
    p.add_argument("--timing", action="store_true",
                   help="add cpu_seconds columns (makes the output run-dependent)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rosterlns", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    solve = sub.add_parser("solve", help="construct a roster and improve it by LNS")
    _add_lns_flags(solve)

    cost = sub.add_parser("cost", help="print the soft-constraint cost breakdown of a roster")
    cost.add_argument("instance")
    cost.add_argument("roster")

    validate = sub.add_parser("validate", help="list the hard-constraint violations of a roster")
    validate.add_argument("instance")
    validate.add_argument("roster")

    bench = sub.add_parser("bench", help="run a preset experiment suite")
    _add_lns_flags(bench)
    bench.add_argument("--suite", choices=["heuristics", "fixed-window", "strategies"], required=True)
    return parser


def config_from_args(args, inst: Instance, node_limit: int = LnsConfig.node_limit) -> LnsConfig:
    cfg = LnsConfig(
        strategy=Strategy(args.strategy),
        window_len=args.window,
        stride=args.stride,
        rows=args.rows,
        size=args.size,
        list_capacity=args.list_cap,
        heuristic=Heuristic(args.heuristic),
        improve_rule=ImproveRule(args.improve),
        max_iters=args.iters,
        time_limit=args.time_limit,
        seed=args.seed,
        node_limit=node_limit if args.nodes is None else args.nodes,
        value_order=ValueOrder(args.value_order),
    )
    try:
        cfg.validate(inst)
    except ValueError as exc:
        raise FlagError(str(exc)) from None
    return cfg


def _reps(args, default: int) -> int:
    reps = default if args.reps is None else args.reps
    if reps < 1:
        raise FlagError("--reps must be at least 1")
    return reps


def _load(path) -> Instance:
    return load_instance(bundled_instance_path() if path is None else path)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def cmd_solve(args) -> int:
    inst = _load(args.instance)
    cfg = config_from_args(args, inst)
    reps = _reps(args, 1)
    m = prepare_model(inst)
    runs: list[RunResult] = []
    for seed in range(cfg.seed, cfg.seed + reps):
        res = run_lns(inst, replace(cfg, seed=seed), model=m)
        log.info("seed %d: trace %s (%s)", seed, res.trace, res.termination.value)
        for mv in res.moves:
            log.debug("seed %d sweep %d fragment %d: %s %d -> %d (%d choice points)", seed, mv.sweep,
                      mv.index, mv.outcome.value, mv.cost_before, mv.cost_after, mv.stats.choice_points)
        runs.append(res)
    rows = cfg.max_iters + 1
    for seed, res in zip(range(cfg.seed, cfg.seed + reps), runs):
        _write(args.out, f"run_seed{seed}.csv", res.to_csv(timing=args.timing, rows=rows))
    mean = mean_trace_csv([r.padded_trace(rows) for r in runs])
    _write(args.out, "mean_trace.csv", mean)
    best = min(runs, key=lambda r: r.cost)
    _write(args.out, "best_roster.txt", str(best.roster) + "\n")
    sys.stdout.write(mean)
    return EXIT_OK


def mean_trace_csv(traces: list[list[int]]) -> str:
    rows = [["iter", "mean_cost"]]
    for k in range(len(traces[0])):
        rows.append([k, format_mean(t[k] for t in traces)])
    return _csv(rows)


def cmd_cost(args) -> int:
    inst = load_instance(args.instance)
    roster = load_roster(args.roster, inst)
    breakdown = roster_cost(inst, roster)
    for v in validate_roster(inst, roster):
        print(f"warning: hard constraint violated: {v}", file=sys.stderr)
    sys.stdout.write(breakdown.to_csv())
    return EXIT_OK


def cmd_validate(args) -> int:
    inst = load_instance(args.instance)
    roster = load_roster(args.roster, inst)
    violations = validate_roster(inst, roster)
    rows = [["constraint_id", "nurse", "first_day", "last_day", "detail"]]
    rows += [[v.rule.name, v.nurse, v.first_day, v.last_day, v.detail] for v in violations]
    sys.stdout.write(_csv(rows))
    return EXIT_HARD if violations else EXIT_OK


def bench_heuristics(inst: Instance, cfg: LnsConfig, timing: bool = False) -> str:
    """Re-optimize the first week of the seed's initial roster under every heuristic.

    All nurses over days 0..6 (or the whole horizon if shorter) are relaxed
    and searched with the configured improve rule and node limit.  The
    ``complete`` column is 1 when the search tree was exhausted.
    """
    m = prepare_model(inst)
    initial = construct_initial(m, seed=cfg.seed)
    cells = [m.var(i, d) for i in range(inst.n_nurses) for d in range(min(7, inst.horizon_days))]
    header = ["heuristic", "choice_points", "fails"] + (["cpu_seconds"] if timing else []) + ["cost", "complete"]
    rows = [header]
    for h in Heuristic:
        m.freeze_except(cells, initial)
        m.propagate()
        res = reoptimize(m, cells, initial, h, cfg.improve_rule, cfg.budget(len(cells)), value_order=cfg.value_order)
        cost = res.cost if res.cost is not None else roster_cost(inst, initial).total
        log.info("%s: %s %s", h.value, res.outcome.value, res.stats)
        row = [h.value, res.stats.choice_points, res.stats.fails]
        if timing:
            row.append(f"{res.stats.cpu_seconds:.3f}")
        rows.append(row + [cost, int(res.complete)])
    m.reset()
    return _csv(rows)


def _initials(inst, m, seeds):
    out = {}
    for seed in seeds:
        out[seed] = construct_initial(m, seed=seed)
    return out


def bench_fixed_window(inst: Instance, cfg: LnsConfig, seeds, out: Path | None = None,
                       timing: bool = False) -> str:
    """Mean cost per sweep for windows of 4, 7 and 14 days.

    Each seed's initial roster is shared by the three window lengths.
    """
    m = prepare_model(inst)
    initials = _initials(inst, m, seeds)
    rows = [["length", "initial"] + [f"iter{k}" for k in range(1, cfg.max_iters + 1)]]
    for L in FIXED_WINDOW_LENGTHS:
        if L > inst.horizon_days:
            continue
        traces = []
        for seed in seeds:
            c = replace(cfg, strategy=Strategy.FIXED, window_len=L, seed=seed)
            res = run_lns(inst, c, initial=initials[seed], model=m)
            log.info("L=%d seed %d: %s", L, seed, res.trace)
            _write(out, f"fixed_L{L}_seed{seed}.csv", res.to_csv(timing=timing, rows=cfg.max_iters + 1))
            traces.append(res.padded_trace(cfg.max_iters + 1))
        rows.append([L] + [format_mean(t[k] for t in traces) for k in range(cfg.max_iters + 1)])
    return _csv(rows)


def strategy_configs(inst: Instance, cfg: LnsConfig) -> list[tuple[str, LnsConfig]]:
    out = [("fixed", replace(cfg, strategy=Strategy.FIXED, window_len=7))]
    for L in OVERLAP_LENGTHS:
        if L <= inst.horizon_days:
            out.append(("overlap", replace(cfg, strategy=Strategy.OVERLAP, window_len=L, stride=min(7, L))))
    out.append(("propagation", replace(cfg, strategy=Strategy.PROPAGATION)))
    return out


def _param(name: str, c: LnsConfig) -> str:
    if name == "propagation":
        return f"q={c.rows};s={c.size}"
    return f"L={c.window_len}"


def bench_strategies(inst: Instance, cfg: LnsConfig, seeds, out: Path | None = None,
                     timing: bool = False) -> str:
    """Mean cost per sweep of FIXED (L=7), OVERLAP (L=7,11,13,15) and PROPAGATION."""
    m = prepare_model(inst)
    initials = _initials(inst, m, seeds)
    rows = [["strategy", "param", "iter", "mean_cost"]]
    for name, c in strategy_configs(inst, cfg):
        traces = []
        for seed in seeds:
            res = run_lns(inst, replace(c, seed=seed), initial=initials[seed], model=m)
            log.info("%s %s seed %d: %s", name, _param(name, c), seed, res.trace)
            tag = _param(name, c).replace(";", "_").replace("=", "")
            _write(out, f"{name}_{tag}_seed{seed}.csv", res.to_csv(timing=timing, rows=cfg.max_iters + 1))
            traces.append(res.padded_trace(cfg.max_iters + 1))
        for k in range(cfg.max_iters + 1):
            rows.append([name, _param(name, c), k, format_mean(t[k] for t in traces)])
    return _csv(rows)


def cmd_bench(args) -> int:
    inst = _load(args.instance)
    heuristics = args.suite == "heuristics"
    cfg = config_from_args(args, inst, HEURISTICS_NODES if heuristics else LnsConfig.node_limit)
    if heuristics:
        text = bench_heuristics(inst, cfg, timing=args.timing)
        name = "heuristics.csv"
    else:
        reps = _reps(args, 10)
        seeds = list(range(cfg.seed, cfg.seed + reps))
        if args.suite == "fixed-window":
            text = bench_fixed_window(inst, cfg, seeds, args.out, args.timing)
            name = "fixed_window.csv"
        else:
            text = bench_strategies(inst, cfg, seeds, args.out, args.timing)
            name = "strategies.csv"
    _write(args.out, name, text)
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "cost": cmd_cost, "validate": cmd_validate, "bench": cmd_bench}


def main(argv=None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args)
    except FlagError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FLAGS
    except FileNotFoundError as exc:
        print(f"error: cannot read {exc.filename}: file not found", file=sys.stderr)
        return EXIT_INPUT
    except (InstanceError, IncompleteRoster) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except OSError as exc:
        print(f"error: cannot read {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_INPUT
    except DimensionMismatch as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIMENSIONS
    except Infeasible as exc:
        print(f"error: infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
