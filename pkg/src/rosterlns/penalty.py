"""Soft-constraint violation measures and roster costing."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass

from .instance import OFF, Instance, Roster, check_dimensions


class SoftRule(enum.IntEnum):
    SINGLE_NIGHT = 0
    STAND_ALONE = 1
    WEEKEND_ONE = 2
    SINGLE_OFF = 3
    WEEKLY_COUNT = 4
    SERIES_LENGTH = 5


class IncompleteRoster(ValueError):
    pass


def soft_card_mu(card: int, lb: int, ub: int) -> int:
    """Distance of ``card`` from the interval ``[lb, ub]``; zero inside it."""
    if lb > ub:
        raise ValueError(f"BOUNDS_INVERTED: lb={lb} > ub={ub}")
    if card > ub:
        return card - ub
    if card < lb:
        return lb - card
    return 0


@dataclass(frozen=True)
class CostBreakdown:
    total: int
    per_constraint: dict[str, int]
    per_row: tuple[int, ...]
    cells: dict[tuple[str, int], int]  # (constraint id, nurse) -> cost

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["constraint_id", "nurse", "cost"])
        for (rule, nurse), cost in self.cells.items():
            w.writerow([rule, nurse, cost])
        w.writerow(["TOTAL", "", self.total])
        return buf.getvalue()


def row_rule_costs(inst: Instance, nurse: int, row: str) -> list[int]:
    """Cost of every soft rule on one complete row, indexed by SoftRule."""
    w = inst.weights
    contract = inst.nurses[nurse].contract
    nights = {s.code for s in inst.working if s.is_night}
    costs = [0] * len(SoftRule)
    n = len(row)
    for j in range(1, n - 1):
        prev, cur, nxt = row[j - 1], row[j], row[j + 1]
        if cur in nights and prev not in nights and nxt not in nights:
            costs[SoftRule.SINGLE_NIGHT] += w.single_night
        if cur != OFF and prev == OFF and nxt == OFF:
            costs[SoftRule.STAND_ALONE] += w.stand_alone_shift
        if cur == OFF and prev != OFF and nxt != OFF:
            costs[SoftRule.SINGLE_OFF] += w.single_day_off
    for we in inst.weekends():
        if len(we) == 2 and sum(row[d] != OFF for d in we) == 1:
            costs[SoftRule.WEEKEND_ONE] += w.weekend_one_shift
    lo, hi = contract.weekly_range
    for week in inst.full_weeks():
        dev = soft_card_mu(sum(row[d] != OFF for d in week), lo, hi)
        costs[SoftRule.WEEKLY_COUNT] += w.weekly_count_unit * dev ** w.weekly_exponent
    lo, hi = contract.series_range
    j = 0
    while j < n:
        if row[j] == OFF:
            j += 1
            continue
        k = j
        while k + 1 < n and row[k + 1] != OFF:
            k += 1
        length = k - j + 1
        # open-ended series at the horizon end are carried forward
        if not (k == n - 1 and length < lo):
            costs[SoftRule.SERIES_LENGTH] += w.series_length_unit * soft_card_mu(length, lo, hi) ** w.series_exponent
        j = k + 1
    return costs


def _check_complete(inst: Instance, r: Roster) -> None:
    check_dimensions(inst, r)
    allowed = set(inst.codes)
    for i, row in enumerate(r.cells):
        for j, c in enumerate(row):
            if c not in allowed:
                raise IncompleteRoster(f"cell ({i}, {j}) holds {c!r}, not a declared shift code")


def roster_cost(inst: Instance, r: Roster) -> CostBreakdown:
    _check_complete(inst, r)
    per_constraint = {rule.name: 0 for rule in SoftRule}
    cells = {}
    per_row = []
    for i, row in enumerate(r.cells):
        costs = row_rule_costs(inst, i, row)
        for rule in SoftRule:
            cells[(rule.name, i)] = costs[rule]
            per_constraint[rule.name] += costs[rule]
        per_row.append(sum(costs))
    return CostBreakdown(sum(per_row), per_constraint, tuple(per_row), cells)


def row_costs(inst: Instance, r: Roster) -> list[tuple[int, int]]:
    """(nurse, cost) pairs, most expensive first, ties by nurse id."""
    per_row = roster_cost(inst, r).per_row
    return sorted(enumerate(per_row), key=lambda ic: (-ic[1], ic[0]))


# ---------------------------------------------------------------------------
# Soft propagators: admissible lower bounds on each rule's cost
# ---------------------------------------------------------------------------

from .engine import Model, Propagator, RowRules  # noqa: E402


class ObjectiveVar:
    """Lower bound on the roster cost, kept in trailed stores.

    Each row contributes the larger of the sum of its per-rule bounds and its
    row-automaton bound (when one is posted); ``lb`` is the sum over rows.
    ``ub`` is the B&B bound: propagation fails once the lower bound exceeds it.
    """

    def __init__(self, n_rows: int = 0):
        self.store = [0]
        self.rule_sum = [0] * n_rows
        self.row_dp = [0] * n_rows
        self.ub: int | None = None
        self.row_props: list = []  # RowCost per nurse, when posted

    @property
    def lb(self) -> int:
        return self.store[0]

    def contribution(self, row: int) -> int:
        return max(self.rule_sum[row], self.row_dp[row])

    def update(self, m: Model, row: int, rule_delta: int = 0, dp: int | None = None) -> None:
        before = self.contribution(row)
        if rule_delta:
            m.write(self.rule_sum, row, self.rule_sum[row] + rule_delta)
        if dp is not None and dp != self.row_dp[row]:
            m.write(self.row_dp, row, dp)
        after = self.contribution(row)
        if after != before:
            m.write(self.store, 0, self.store[0] + after - before)

    def within_bound(self) -> bool:
        return self.ub is None or self.store[0] <= self.ub


class SoftPropagator(Propagator):
    priority = 2

    def __init__(self, name, slot, vars, objective):
        self.name = name
        self.slot = slot
        self.row = slot // len(SoftRule)
        self.vars = tuple(vars)
        self.objective = objective

    def bound(self, dom) -> int:
        raise NotImplementedError

    def propagate(self, m):
        val = self.bound(m.dom)
        old = m.viol[self.slot]
        if val != old:
            m.write(m.viol, self.slot, val)
            self.objective.update(m, self.row, rule_delta=val - old)
        return self.objective.within_bound()


class EntailedPatterns(SoftPropagator):
    """``weight`` for every pattern whose positions are all forced into their masks."""

    def __init__(self, name, slot, patterns, weight, objective):
        self.patterns = [(tuple(vs), tuple(ms)) for vs, ms in patterns]
        vars_ = sorted({v for vs, _ in self.patterns for v in vs})
        super().__init__(name, slot, vars_, objective)
        self.weight = weight

    def bound(self, dom):
        hits = 0
        for vs, ms in self.patterns:
            for v, mk in zip(vs, ms):
                if dom[v] & ~mk:
                    break
            else:
                hits += 1
        return hits * self.weight


class WeeklyCount(SoftPropagator):
    def __init__(self, name, slot, weeks, work, lo, hi, unit, exponent, objective):
        self.weeks = [tuple(w) for w in weeks]
        super().__init__(name, slot, [v for w in self.weeks for v in w], objective)
        self.work, self.lo, self.hi = work, lo, hi
        self.unit, self.exponent = unit, exponent

    def bound(self, dom):
        work = self.work
        total = 0
        for week in self.weeks:
            must = can = 0
            for v in week:
                d = dom[v]
                if d & work:
                    can += 1
                    if not d & ~work:
                        must += 1
            if can < self.lo:
                dev = self.lo - can
            elif must > self.hi:
                dev = must - self.hi
            else:
                continue
            total += self.unit * dev ** self.exponent
        return total


class SeriesLength(SoftPropagator):
    """Exact cost of every series already closed off on both sides."""

    def __init__(self, name, slot, row, work, off, lo, hi, unit, exponent, objective):
        super().__init__(name, slot, row, objective)
        self.work, self.off, self.lo, self.hi = work, off, lo, hi
        self.unit, self.exponent = unit, exponent

    def bound(self, dom):
        row = self.vars
        n = len(row)
        work, off = self.work, self.off
        lo, hi = self.lo, self.hi
        total = 0
        j = 0
        while j < n:
            d = dom[row[j]]
            if d & ~work:
                j += 1
                continue
            k = j
            while k + 1 < n and not dom[row[k + 1]] & ~work:
                k += 1
            closed_left = j == 0 or dom[row[j - 1]] == off
            closed_right = k == n - 1 or dom[row[k + 1]] == off
            if closed_left and closed_right:
                length = k - j + 1
                if not (k == n - 1 and length < lo):
                    if length < lo:
                        total += self.unit * (lo - length) ** self.exponent
                    elif length > hi:
                        total += self.unit * (length - hi) ** self.exponent
            j = k + 1
        return total


class RowCost(RowRules):
    """Exact minimum soft cost of one row over its hard-feasible completions.

    The hard row automaton is extended with the little extra state the soft
    rules need (the current run of days off, the shifts worked so far in the
    current full week, whether the Saturday of a two-day weekend was worked),
    and every transition is charged the soft cost it completes.  A shortest
    path over the row domains then gives the cheapest completion of the row.
    Ignoring the other rows only makes that minimum smaller, so it is an
    admissible bound.  While a bound ``ub`` is set, values whose cheapest
    completion would push the objective above ``ub`` are removed.

    The propagator stays idle (bound 0) while no ``ub`` is set, which keeps
    the construction phase purely hard.
    """

    priority = 2

    def __init__(self, name, vars, inst: Instance, nurse: int, objective: ObjectiveVar):
        super().__init__(name, vars, inst, nurse)
        self.objective = objective
        w = inst.weights
        c = inst.nurses[nurse].contract
        self.w = w
        self.series_lo, self.series_hi = c.series_range
        self.week_lo, self.week_hi = c.weekly_range
        n = len(self.vars)
        self.week_start = [False] * n
        self.week_end = [False] * n
        self.in_week = [False] * n
        for wk in inst.full_weeks():
            self.week_start[wk[0]] = True
            self.week_end[wk[-1]] = True
            for d in wk:
                self.in_week[d] = True
        self.sat = [False] * n
        self.sun = [False] * n
        for we in inst.weekends():
            if len(we) == 2:
                self.sat[we[0]] = True
                self.sun[we[1]] = True

    @property
    def active(self) -> bool:
        return self.objective.ub is not None

    def _start(self):
        return super()._start() + (0, 0, False)

    def _series_cost(self, length: int) -> int:
        mu = soft_card_mu(length, self.series_lo, self.series_hi)
        return self.w.series_length_unit * mu ** self.w.series_exponent if mu else 0

    def _step(self, s, v, j):
        res = super()._step(s, v, j)
        if res is None:
            return None
        hard, _ = res
        _, run, _, nrun = s[:4]
        orun, wcount, wsat = s[8:]
        w = self.w
        off = v == self.off
        cost = 0
        if j >= 2:
            # patterns centred on the previous day
            if nrun == 1 and not self.is_night[v]:
                cost += w.single_night
            if run == 1 and off:
                cost += w.stand_alone_shift
            if orun == 1 and not off:
                cost += w.single_day_off
        if off and run:
            cost += self._series_cost(run)
        orun = min(orun + 1, 2) if off else 0
        if self.in_week[j]:
            if self.week_start[j]:
                wcount = 0
            wcount += not off
            if self.week_end[j]:
                mu = soft_card_mu(wcount, self.week_lo, self.week_hi)
                if mu:
                    cost += w.weekly_count_unit * mu ** w.weekly_exponent
                wcount = 0
        if self.sat[j]:
            wsat = not off
        elif self.sun[j]:
            if wsat == off:
                cost += w.weekend_one_shift
            wsat = False
        return hard + (orun, wcount, wsat), cost

    def completion_costs(self, m: Model, day: int, offsets=None) -> dict[int, int]:
        """Cheapest row completion through each value of ``day`` under the current domains.

        ``offsets`` are per-(day, value) cost adjustments passed to the
        dynamic program (see ``RowRules.solve_row``).
        """
        doms = tuple(m.dom[v] for v in self.vars)
        cache = getattr(self, "_cache", None)
        if cache is None or cache[0] != doms or cache[2] is not offsets:
            res = self.solve_row(list(doms), offsets)
            cache = (doms, res[1] if res is not None else {}, offsets)
            self._cache = cache
        return cache[1].get(day, {})

    def _final(self, s) -> int:
        run = s[1]
        if run and run >= self.series_lo:
            return self._series_cost(run)
        return 0

    def propagate(self, m):
        obj = self.objective
        if obj.ub is None:
            if obj.row_dp[self.nurse]:
                obj.update(m, self.nurse, dp=0)
            return True
        doms = [m.dom[v] for v in self.vars]
        res = self.solve_row(doms)
        if res is None:
            return False
        best, through = res
        self._cache = (tuple(doms), through, None)
        obj.update(m, self.nurse, dp=best)
        if not obj.within_bound():
            return False
        # cheapest completion through a value, plus the other rows' bounds
        allowed = obj.ub - (obj.lb - obj.contribution(self.nurse))
        for j, best_v in through.items():
            d = doms[j]
            keep = 0
            for v, t in best_v.items():
                if t <= allowed:
                    keep |= 1 << v
            if d & ~keep:
                if not keep or not m.set_domain(self.vars[j], d & keep):
                    return False
        return True


def post_soft_constraints(m: Model, inst: Instance, row_bound: bool = True) -> ObjectiveVar:
    """Register one bound propagator per (nurse, soft rule); returns the objective.

    With ``row_bound`` a ``RowCost`` propagator per nurse tightens each row's
    contribution to its exact cheapest row completion while a bound is set.
    """
    if m.objective is not None:
        return m.objective
    obj = ObjectiveVar(inst.n_nurses)
    m.objective = obj
    m.viol = [0] * (inst.n_nurses * len(SoftRule))
    w = inst.weights
    full, off, work, night = m.full, m.off_bit, m.work_mask, m.night_mask
    not_night = full & ~night
    weekends = [we for we in inst.weekends() if len(we) == 2]
    weeks = inst.full_weeks()
    for i, nurse in enumerate(inst.nurses):
        row = list(m.row_vars(i))
        triples = [row[j - 1:j + 2] for j in range(1, len(row) - 1)]
        base = i * len(SoftRule)
        c = nurse.contract
        props = [
            EntailedPatterns(f"SINGLE_NIGHT n={i}", base + SoftRule.SINGLE_NIGHT,
                             [(t, (not_night, night, not_night)) for t in triples] if night else [],
                             w.single_night, obj),
            EntailedPatterns(f"STAND_ALONE n={i}", base + SoftRule.STAND_ALONE,
                             [(t, (off, work, off)) for t in triples], w.stand_alone_shift, obj),
            EntailedPatterns(f"WEEKEND_ONE n={i}", base + SoftRule.WEEKEND_ONE,
                             [p for we in weekends for p in
                              (([row[d] for d in we], (work, off)), ([row[d] for d in we], (off, work)))],
                             w.weekend_one_shift, obj),
            EntailedPatterns(f"SINGLE_OFF n={i}", base + SoftRule.SINGLE_OFF,
                             [(t, (work, off, work)) for t in triples], w.single_day_off, obj),
            WeeklyCount(f"WEEKLY_COUNT n={i}", base + SoftRule.WEEKLY_COUNT,
                        [[row[d] for d in wk] for wk in weeks], work, *c.weekly_range,
                        w.weekly_count_unit, w.weekly_exponent, obj),
            SeriesLength(f"SERIES_LENGTH n={i}", base + SoftRule.SERIES_LENGTH, row, work, off,
                         *c.series_range, w.series_length_unit, w.series_exponent, obj),
        ]
        for p in props:
            if p.vars:
                m.add(p)
        if row_bound:
            rc = RowCost(f"ROW_COST n={i}", row, inst, i, obj)
            key = (RowCost, c)
            if key in m.automata:
                rc.share_tables(m.automata[key])
            else:
                m.automata[key] = rc
            m.add(rc)
            obj.row_props.append(rc)
            for p in m.props:
                if type(p) is RowRules and p.nurse == i:
                    p.covered_by = rc
    return obj
