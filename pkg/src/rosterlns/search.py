"""Depth-first branch-and-bound over the CP model.

Branching is binary: a choice point either assigns the selected variable its
first value or removes that value.  Every dead end, whether a propagation
failure or a cut by the objective bound, counts as one fail.
"""

from __future__ import annotations

import enum
import random
import time
from dataclasses import dataclass
from typing import Callable, Iterable

from .engine import Model, Status
from .instance import Roster
from .penalty import roster_cost


class Infeasible(RuntimeError):
    pass


class Heuristic(enum.Enum):
    MinSizeInt = "MinSizeInt"
    MaxSizeInt = "MaxSizeInt"
    MinMinInt = "MinMinInt"
    MaxMinInt = "MaxMinInt"
    MinMaxInt = "MinMaxInt"
    MaxMaxInt = "MaxMaxInt"


class ImproveRule(enum.Enum):
    FIRST_IMPROVED = "first"
    BEST_IMPROVED = "best"


class ValueOrder(enum.Enum):
    # ascending shift-code order, O last
    ASCENDING = "ascending"
    # cheapest row completion first (needs the row cost bound), ties ascending
    ROW_COST = "row-cost"
    # as ROW_COST, with every (day, shift) priced to steer rows towards the
    # day coverage they must jointly meet
    PRICED = "priced"


class Outcome(enum.Enum):
    IMPROVED = "IMPROVED"
    NO_IMPROVEMENT = "NO_IMPROVEMENT"
    BUDGET_EXHAUSTED = "BUDGET_EXHAUSTED"


@dataclass
class SearchStats:
    choice_points: int = 0
    fails: int = 0
    cpu_seconds: float = 0.0

    def __iadd__(self, other: "SearchStats") -> "SearchStats":
        self.choice_points += other.choice_points
        self.fails += other.fails
        self.cpu_seconds += other.cpu_seconds
        return self


@dataclass(frozen=True)
class Budget:
    max_nodes: int | None = 100_000
    time_limit: float | None = None  # seconds of CPU time


@dataclass
class ReoptResult:
    outcome: Outcome
    roster: Roster | None
    cost: int | None
    stats: SearchStats
    # True when the search tree was exhausted, i.e. the result is optimal for
    # BEST_IMPROVED or a proof that nothing beats the incumbent
    complete: bool


def _criterion(h: Heuristic):
    # returns (key(domain), prefer_larger)
    if h is Heuristic.MinSizeInt:
        return int.bit_count, False
    if h is Heuristic.MaxSizeInt:
        return int.bit_count, True
    if h is Heuristic.MinMinInt:
        return lambda d: (d & -d).bit_length(), False
    if h is Heuristic.MaxMinInt:
        return lambda d: (d & -d).bit_length(), True
    if h is Heuristic.MinMaxInt:
        return int.bit_length, False
    return int.bit_length, True


def select_variable(h: Heuristic, m: Model, candidates: Iterable[int] | None = None) -> int | None:
    """Best unfixed, unfrozen variable under ``h``; ties go to the lowest (nurse, day)."""
    key, larger = _criterion(h)
    dom, frozen = m.dom, m.frozen
    best, best_key = None, None
    for v in (range(m.n_vars) if candidates is None else candidates):
        d = dom[v]
        if d & (d - 1) == 0 or frozen[v]:
            continue
        k = key(d)
        if best is None or (k > best_key if larger else k < best_key):
            best, best_key = v, k
    return best


def _dfs(
    m: Model,
    candidates: list[int],
    h: Heuristic,
    first_value: Callable[[int, int], int],
    on_solution: Callable[[], bool],
    stats: SearchStats,
    budget: Budget,
) -> bool:
    """Run the tree search; returns True iff the tree was exhausted.

    The model is returned at the trail depth it had on entry.
    """
    depth = m.depth
    try:
        return _dfs_loop(m, candidates, h, first_value, on_solution, stats, budget)
    finally:
        while m.depth > depth:
            m.pop()


def _dfs_loop(m, candidates, h, first_value, on_solution, stats, budget):
    obj = m.objective
    t0 = time.process_time()

    def node_ok():
        if m.propagate()[0] is Status.FAILED:
            return False
        return obj is None or obj.ub is None or obj.lb <= obj.ub

    stack: list[tuple[int, int]] = []
    ok = node_ok()
    while True:
        if ok:
            v = select_variable(h, m, candidates)
            if v is None:
                if on_solution():
                    return False
            else:
                if budget.max_nodes is not None and stats.choice_points >= budget.max_nodes:
                    return False
                if budget.time_limit is not None and time.process_time() - t0 > budget.time_limit:
                    return False
                stats.choice_points += 1
                val = first_value(v, m.dom[v])
                m.push()
                stack.append((v, val))
                m.assign(v, val)
                ok = node_ok()
                continue
        else:
            stats.fails += 1
        if not stack:
            return True
        v, val = stack.pop()
        m.pop()
        m.remove(v, val)
        ok = node_ok()


def _ascending(v: int, d: int) -> int:
    return (d & -d).bit_length() - 1


def coverage_prices(m: Model, days: Iterable[int], target: int, iterations: int = 10,
                    step: float = 0.5) -> list[list[int] | None]:
    """Integer prices per (day, value) from a few subgradient steps.

    Each row independently picks its cheapest completion under the current
    domains, with every cell's value charged the price of its (day, value).
    Prices of values taken more often than the day's coverage requires go up,
    the others down, so that the rows' independent choices drift towards
    jointly meeting the coverage.  ``target`` (normally the incumbent cost)
    scales the step.
    """
    inst = m.inst
    rows = m.objective.row_props
    n_nurses, K = inst.n_nurses, m.n_values
    days = sorted(set(days))
    need = {j: list(inst.demand[j]) + [n_nurses - sum(inst.demand[j])] for j in days}
    lam = {j: [0.0] * K for j in days}
    offsets: list[list[int] | None] = [None] * m.n_days
    best, stall = None, 0
    for _ in range(iterations):
        for j in days:
            offsets[j] = [round(x) for x in lam[j]]
        value = -sum(offsets[j][v] * need[j][v] for j in days for v in range(K))
        count = {j: [0] * K for j in days}
        for rc in rows:
            doms = [m.dom[v] for v in rc.vars]
            res = rc.solve_row(doms, offsets)
            if res is None:
                return offsets
            value += res[0]
            through = res[1]
            for j in days:
                if j in through:
                    t = through[j]
                    count[j][min(t, key=lambda v: (t[v], v))] += 1
                else:
                    count[j][doms[j].bit_length() - 1] += 1
        if best is None or value > best:
            best, stall = value, 0
        else:
            stall += 1
            if stall >= 3:
                step /= 2
                stall = 0
        grad = {j: [count[j][v] - need[j][v] for v in range(K)] for j in days}
        norm = sum(g * g for j in days for g in grad[j])
        if norm == 0:
            break
        t = step * (min(target, 1.5 * max(best, 1)) - value) / norm
        for j in days:
            for v in range(K):
                lam[j][v] += t * grad[j][v]
    for j in days:
        offsets[j] = [round(x) for x in lam[j]]
    return offsets


def _row_cost_order(m: Model, offsets=None):
    rows = m.objective.row_props
    n_days = m.n_days

    def first_value(v: int, d: int) -> int:
        through = rows[v // n_days].completion_costs(m, v % n_days, offsets)
        best, best_cost = None, None
        for val, cost in through.items():
            if d >> val & 1 and (best is None or (cost, val) < (best_cost, best)):
                best, best_cost = val, cost
        return _ascending(v, d) if best is None else best

    return first_value


def construct_initial(
    m: Model,
    seed: int = 0,
    heuristic: Heuristic = Heuristic.MinSizeInt,
    budget: Budget = Budget(max_nodes=None),
    dive_nodes: int = 500,
) -> Roster:
    """First hard-feasible roster found by seeded DFS dives.

    Each dive draws a fresh per-cell rotation of the ascending value order
    from ``random.Random(seed)`` and gives up after ``dive_nodes`` choice
    points (the limit grows by ``dive_nodes`` every tenth dive).  A dive that
    exhausts its tree proves infeasibility.  ``budget`` caps the total over all
    dives.  The model is left as it was on entry.
    """
    rng = random.Random(seed)
    k = m.n_values
    obj = m.objective
    saved_ub = obj.ub if obj is not None else None
    if obj is not None:
        obj.ub = None
    candidates = [v for v in range(m.n_vars) if not m.frozen[v]]
    found: list[Roster] = []

    def on_solution():
        found.append(m.to_roster())
        return True

    stats = SearchStats()
    t0 = time.process_time()
    attempt = 0
    try:
        while not found:
            rotation = [rng.randrange(k) for _ in range(m.n_vars)]

            def first_value(v, d, r=rotation):
                for t in range(k):
                    val = (r[v] + t) % k
                    if d >> val & 1:
                        return val
                raise AssertionError("empty domain")

            limit = dive_nodes * (1 + attempt // 10)
            if budget.max_nodes is not None:
                limit = min(limit, budget.max_nodes - stats.choice_points)
            dive = SearchStats()
            exhausted = _dfs(m, candidates, heuristic, first_value, on_solution, dive,
                             Budget(max_nodes=limit))
            stats += dive
            attempt += 1
            if found:
                break
            if exhausted:
                raise Infeasible("no roster satisfies the hard constraints")
            if budget.max_nodes is not None and stats.choice_points >= budget.max_nodes:
                raise Infeasible(f"no feasible roster found within {budget.max_nodes} choice points")
            if budget.time_limit is not None and time.process_time() - t0 > budget.time_limit:
                raise Infeasible(f"no feasible roster found within {budget.time_limit} s")
    finally:
        if obj is not None:
            obj.ub = saved_ub
    return found[0]


def reoptimize(
    m: Model,
    fragment: Iterable[int],
    incumbent: Roster,
    heuristic: Heuristic = Heuristic.MinSizeInt,
    rule: ImproveRule = ImproveRule.BEST_IMPROVED,
    budget: Budget = Budget(),
    incumbent_cost: int | None = None,
    value_order: ValueOrder = ValueOrder.ASCENDING,
) -> ReoptResult:
    """Search the relaxed fragment for a roster strictly cheaper than ``incumbent``.

    Expects ``m.freeze_except(fragment, incumbent)`` to have been applied.
    """
    t0 = time.process_time()
    stats = SearchStats()
    candidates = sorted(set(fragment))
    if not candidates:
        return ReoptResult(Outcome.NO_IMPROVEMENT, None, None, stats, True)
    if incumbent_cost is None:
        incumbent_cost = roster_cost(m.inst, incumbent).total
    obj = m.objective
    if obj is None:
        raise ValueError("post_soft_constraints must run before reoptimize")

    best: list[tuple[Roster, int]] = []

    def on_solution():
        best.append((m.to_roster(), obj.lb))
        obj.ub = obj.lb - 1
        return rule is ImproveRule.FIRST_IMPROVED

    obj.ub = incumbent_cost - 1
    m.push()
    # bound-dependent soft propagators wake up once a bound is in place
    m.schedule_all(priority=2)
    try:
        first_value = _ascending
        if value_order is not ValueOrder.ASCENDING and obj.row_props:
            offsets = None
            if value_order is ValueOrder.PRICED and m.propagate()[0] is Status.CONSISTENT:
                offsets = coverage_prices(m, [v % m.n_days for v in candidates], incumbent_cost)
            first_value = _row_cost_order(m, offsets)
        complete = _dfs(m, candidates, heuristic, first_value, on_solution, stats, budget)
    finally:
        m.pop()
        obj.ub = None
    stats.cpu_seconds = time.process_time() - t0
    if best:
        roster, cost = best[-1]
        return ReoptResult(Outcome.IMPROVED, roster, cost, stats, complete)
    outcome = Outcome.NO_IMPROVEMENT if complete else Outcome.BUDGET_EXHAUSTED
    return ReoptResult(outcome, None, None, stats, complete)
