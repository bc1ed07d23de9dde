"""Large neighbourhood search: fragment selection and the improvement loop.

Starting from a hard-feasible roster, each step relaxes a fragment of the
grid (every other cell stays at its incumbent value) and re-optimizes it with
branch-and-bound.  Three fragment strategies are provided:

* FIXED -- consecutive, non-overlapping day windows spanning all nurses;
* OVERLAP -- day windows advancing by a stride shorter than the window;
* PROPAGATION -- cells of the most expensive rows, grown by following the
  propagation links between cells.

One *sweep* is the number of fragments that together visit the whole grid
once.  The cost trace holds the incumbent cost after every sweep.
"""

from __future__ import annotations

import csv
import enum
import io
import math
import random
import time
from collections import deque
from dataclasses import dataclass, field

from .engine import Model, Status, TraceEvent, build_model
from .instance import Instance, Roster
from .penalty import post_soft_constraints, roster_cost, row_costs
from .search import (
    Budget,
    Heuristic,
    ImproveRule,
    Infeasible,
    Outcome,
    SearchStats,
    construct_initial,
    ValueOrder,
    reoptimize,
)


class Strategy(enum.Enum):
    FIXED = "fixed"
    OVERLAP = "overlap"
    PROPAGATION = "propagation"


class Termination(enum.Enum):
    MAX_ITERS = "max_iters"
    TIME_LIMIT = "time_limit"
    STAGNATION = "stagnation"
    ZERO_COST = "zero_cost"


@dataclass(frozen=True)
class PropagationStep:
    """One pass of the propagation-guided fragment loop."""

    cell: tuple[int, int]
    source: str  # "list" or "random"
    linked: tuple[tuple[int, int], ...]  # cells appended to the list in this step
    events: tuple[TraceEvent, ...]
    list_len: int  # list length after the step


@dataclass(frozen=True)
class Fragment:
    cells: frozenset[tuple[int, int]]
    strategy: Strategy
    iteration: int
    rows: tuple[int, ...] = ()  # eligible rows (PROPAGATION only)
    steps: tuple[PropagationStep, ...] = ()

    def __len__(self):
        return len(self.cells)

    def var_ids(self, n_days: int) -> list[int]:
        return sorted(i * n_days + j for i, j in self.cells)

    @property
    def max_list_len(self) -> int:
        return max((s.list_len for s in self.steps), default=0)


@dataclass
class LnsConfig:
    strategy: Strategy = Strategy.FIXED
    window_len: int = 7
    stride: int = 7
    rows: int = 2  # q
    size: int = 21  # s
    list_capacity: int = 7
    heuristic: Heuristic = Heuristic.MinSizeInt
    improve_rule: ImproveRule = ImproveRule.BEST_IMPROVED
    max_iters: int = 4  # sweeps
    time_limit: float | None = None  # CPU seconds for the whole run
    seed: int = 0
    epsilon: float = 1.0  # multiplier on ``size``; kept at 1
    node_limit: int | None = 200  # choice points per re-optimization (floor)
    nodes_per_cell: float = 3.5  # larger fragments get proportionally more choice points
    reopt_time_limit: float | None = None  # CPU seconds per re-optimization
    value_order: ValueOrder = ValueOrder.PRICED

    def validate(self, inst: Instance) -> None:
        J = inst.horizon_days
        if not 1 <= self.window_len <= J:
            raise ValueError(f"window length must lie in 1..{J}, got {self.window_len}")
        if self.strategy is Strategy.OVERLAP and not 1 <= self.stride <= self.window_len:
            raise ValueError(f"stride must lie in 1..{self.window_len}, got {self.stride}")
        if not 1 <= self.rows <= inst.n_nurses:
            raise ValueError(f"rows must lie in 1..{inst.n_nurses}, got {self.rows}")
        if self.size < 1:
            raise ValueError(f"fragment size must be positive, got {self.size}")
        if self.list_capacity < 1:
            raise ValueError(f"list capacity must be positive, got {self.list_capacity}")
        if self.max_iters < 0:
            raise ValueError(f"iterations must be non-negative, got {self.max_iters}")
        if self.node_limit is not None and self.node_limit < 1:
            raise ValueError(f"node limit must be positive, got {self.node_limit}")
        if self.nodes_per_cell < 0:
            raise ValueError(f"nodes per cell must be non-negative, got {self.nodes_per_cell}")

    def budget(self, fragment_size: int = 0) -> Budget:
        """Search budget for one re-optimization of ``fragment_size`` relaxed cells."""
        nodes = self.node_limit
        if nodes is not None:
            nodes = max(nodes, math.ceil(self.nodes_per_cell * fragment_size))
        return Budget(max_nodes=nodes, time_limit=self.reopt_time_limit)

    def target_size(self, inst: Instance) -> int:
        return min(max(1, math.ceil(self.size * self.epsilon)), self.rows * inst.horizon_days)


@dataclass(frozen=True)
class Move:
    """One re-optimization inside a sweep."""

    sweep: int
    index: int
    fragment_size: int
    outcome: Outcome
    cost_before: int
    cost_after: int
    stats: SearchStats
    roster: Roster | None = None  # the new incumbent when the move improved


@dataclass
class RunResult:
    trace: list[int]  # trace[0] = initial cost, then one entry per sweep
    stats: list[SearchStats]  # stats[0] = construction, then one per sweep
    roster: Roster
    initial: Roster
    termination: Termination
    moves: list[Move] = field(default_factory=list)

    @property
    def cost(self) -> int:
        return self.trace[-1]

    def padded_trace(self, length: int) -> list[int]:
        """The trace extended to ``length`` entries by repeating the final cost.

        A run that stopped early keeps its incumbent, so later sweeps would
        report the same cost.
        """
        return self.trace[:length] + [self.trace[-1]] * (length - len(self.trace))

    def to_csv(self, timing: bool = True, rows: int | None = None) -> str:
        """``iter,cost,choice_points,fails[,cpu_seconds]``, one row per trace entry.

        With ``rows`` the trace is padded (see ``padded_trace``); padded
        sweeps did no search and report zero counts.
        """
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        header = ["iter", "cost", "choice_points", "fails"]
        w.writerow(header + ["cpu_seconds"] if timing else header)
        trace = self.trace if rows is None else self.padded_trace(rows)
        for k, cost in enumerate(trace):
            st = self.stats[k] if k < len(self.stats) else SearchStats()
            row = [k, cost, st.choice_points, st.fails]
            w.writerow(row + [f"{st.cpu_seconds:.3f}"] if timing else row)
        return buf.getvalue()


# ---------------------------------------------------------------------------
# Fragment selection
# ---------------------------------------------------------------------------

def fixed_placements(J: int, L: int) -> int:
    return math.ceil(J / L)


def overlap_placements(J: int, L: int, stride: int) -> int:
    return math.ceil(max(J - L, 0) / stride) + 1


def _window(inst: Instance, start: int, L: int, strategy: Strategy, iteration: int) -> Fragment:
    days = range(start, min(start + L, inst.horizon_days))
    cells = frozenset((i, d) for i in range(inst.n_nurses) for d in days)
    return Fragment(cells, strategy, iteration)


def fragment_fixed(iteration: int, inst: Instance, L: int) -> Fragment:
    """All nurses over the ``iteration``-th window of ``L`` days, cycling over the horizon."""
    if not 1 <= L <= inst.horizon_days:
        raise ValueError(f"window length must lie in 1..{inst.horizon_days}")
    start = (iteration % fixed_placements(inst.horizon_days, L)) * L
    return _window(inst, start, L, Strategy.FIXED, iteration)


def fragment_overlap(iteration: int, inst: Instance, L: int, stride: int) -> Fragment:
    """All nurses over an ``L``-day window whose start advances by ``stride`` days.

    The last placement is the first one reaching the horizon end (truncated
    there), after which the windows start over from day 0.
    """
    if not 1 <= L <= inst.horizon_days:
        raise ValueError(f"window length must lie in 1..{inst.horizon_days}")
    if not 1 <= stride <= L:
        raise ValueError("stride must lie in 1..L")
    start = (iteration % overlap_placements(inst.horizon_days, L, stride)) * stride
    return _window(inst, start, L, Strategy.OVERLAP, iteration)


def fragment_propagation(
    m: Model,
    incumbent: Roster,
    q: int,
    s: int,
    list_capacity: int = 7,
    seed: int | random.Random = 0,
    iteration: int = 0,
) -> Fragment:
    """Grow a fragment inside the ``q`` most expensive rows by following propagation.

    The eligible rows are relaxed (all other cells fixed to the incumbent)
    under a trail mark.  Each step takes the head of a bounded FIFO list of
    candidate cells, or a random eligible cell when the list is empty, fixes
    it back to its incumbent value and propagates.  Eligible cells whose
    domains shrank in that propagation are linked to the chosen cell and join
    the list.  The chosen cell joins the fragment.  The model is restored on
    return.
    """
    if m.marks:
        raise ValueError("fragment_propagation needs an empty trail")
    inst = m.inst
    rng = seed if isinstance(seed, random.Random) else random.Random(seed)
    J = inst.horizon_days
    ranked = row_costs(inst, incumbent)
    rows = tuple(sorted(i for i, _ in ranked[:q]))
    eligible = [m.var(i, d) for i in rows for d in range(J)]
    eligible_set = set(eligible)
    target = min(s, len(eligible))
    index = {c: k for k, c in enumerate(inst.codes)}

    chosen: list[int] = []
    in_fragment: set[int] = set()
    pending: deque[int] = deque()
    steps: list[PropagationStep] = []
    was_tracing = m.tracing
    m.push()
    try:
        m.relax(eligible, incumbent)
        if m.propagate()[0] is Status.FAILED:
            raise RuntimeError("incumbent violates the hard constraints")
        m.tracing = True
        m.reset_trace()
        while len(chosen) < target:
            if pending:
                v, source = pending.popleft(), "list"
            else:
                rest = [c for c in eligible if c not in in_fragment]
                v, source = rng.choice(rest), "random"
            chosen.append(v)
            in_fragment.add(v)
            i, d = m.cell(v)
            if not m.assign(v, index[incumbent[i, d]]):
                raise RuntimeError("incumbent value was pruned")
            status, events = m.propagate()
            if status is Status.FAILED:
                raise RuntimeError("incumbent violates the hard constraints")
            linked = []
            for ev in events:
                c = ev.affected
                if c in eligible_set and c not in in_fragment and c not in pending:
                    if len(pending) >= list_capacity:
                        pending.popleft()
                    pending.append(c)
                    linked.append(m.cell(c))
            steps.append(PropagationStep((i, d), source, tuple(linked), tuple(events), len(pending)))
    finally:
        m.pop()
        m.tracing = was_tracing
        m.reset_trace()
    cells = frozenset(m.cell(v) for v in chosen)
    return Fragment(cells, Strategy.PROPAGATION, iteration, rows, tuple(steps))


# ---------------------------------------------------------------------------
# The improvement loop
# ---------------------------------------------------------------------------

def prepare_model(inst: Instance) -> Model:
    """Model with every hard and soft constraint posted, propagated at the root."""
    m = build_model(inst)
    post_soft_constraints(m, inst)
    if m.propagate()[0] is Status.FAILED:
        raise Infeasible("the hard constraints fail at the root")
    return m


def fragments_per_sweep(inst: Instance, cfg: LnsConfig) -> int:
    J = inst.horizon_days
    if cfg.strategy is Strategy.FIXED:
        return fixed_placements(J, cfg.window_len)
    if cfg.strategy is Strategy.OVERLAP:
        return overlap_placements(J, cfg.window_len, cfg.stride)
    return math.ceil(inst.n_nurses * J / cfg.target_size(inst))


def run_lns(
    inst: Instance,
    cfg: LnsConfig,
    initial: Roster | None = None,
    model: Model | None = None,
) -> RunResult:
    """Construct an initial roster (unless given) and improve it sweep by sweep.

    Stops after ``cfg.max_iters`` sweeps, when the CPU time limit is hit, when
    a whole sweep brings no improvement, or when the cost reaches zero.
    """
    cfg.validate(inst)
    t0 = time.process_time()
    m = model if model is not None else prepare_model(inst)
    construction = SearchStats()
    if initial is None:
        initial = construct_initial(m, seed=cfg.seed)
        construction.cpu_seconds = time.process_time() - t0
    incumbent = initial
    cost = roster_cost(inst, incumbent).total
    trace = [cost]
    stats = [construction]
    moves: list[Move] = []
    try:
        termination = _improve(inst, cfg, m, incumbent, t0, trace, stats, moves)
    finally:
        m.reset()
    incumbent = _last_roster(moves, initial)
    return RunResult(trace, stats, incumbent, initial, termination, moves)


def _improve(inst, cfg, m, incumbent, t0, trace, stats, moves) -> Termination:
    cost = trace[-1]
    rng = random.Random(f"fragments-{cfg.seed}")
    per_sweep = fragments_per_sweep(inst, cfg)
    J = inst.horizon_days
    k = 0
    termination = Termination.MAX_ITERS
    for sweep in range(1, cfg.max_iters + 1):
        if cost == 0:
            return Termination.ZERO_COST
        sweep_stats = SearchStats()
        improved = False
        out_of_time = False
        for idx in range(per_sweep):
            if cfg.strategy is Strategy.FIXED:
                frag = fragment_fixed(k, inst, cfg.window_len)
            elif cfg.strategy is Strategy.OVERLAP:
                frag = fragment_overlap(k, inst, cfg.window_len, cfg.stride)
            else:
                frag = fragment_propagation(m, incumbent, cfg.rows, cfg.target_size(inst),
                                            cfg.list_capacity, rng, k)
            k += 1
            cells = frag.var_ids(J)
            m.freeze_except(cells, incumbent)
            if m.propagate()[0] is Status.FAILED:
                raise RuntimeError("incumbent violates the hard constraints")
            res = reoptimize(m, cells, incumbent, cfg.heuristic, cfg.improve_rule, cfg.budget(len(cells)), cost,
                             cfg.value_order)
            sweep_stats += res.stats
            before = cost
            if res.outcome is Outcome.IMPROVED:
                assert res.cost < cost
                incumbent, cost = res.roster, res.cost
                improved = True
            moves.append(Move(sweep, idx, len(frag), res.outcome, before, cost, res.stats,
                              res.roster if res.outcome is Outcome.IMPROVED else None))
            if cost == 0:
                break
            if cfg.time_limit is not None and time.process_time() - t0 > cfg.time_limit:
                out_of_time = True
                break
        trace.append(cost)
        stats.append(sweep_stats)
        if out_of_time:
            termination = Termination.TIME_LIMIT
            break
        if not improved:
            termination = Termination.STAGNATION
            break
    return termination


def _last_roster(moves: list[Move], initial: Roster) -> Roster:
    for mv in reversed(moves):
        if mv.roster is not None:
            return mv.roster
    return initial
