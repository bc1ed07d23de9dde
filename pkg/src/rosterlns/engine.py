"""Finite-domain store with trailing, fixpoint propagation and the hard rules.

Domains are bitmasks over value indices; value ``k`` is the ``k``-th shift
type of the instance and the off code is always the highest index.  Cell
``(nurse, day)`` is variable ``nurse * horizon + day``.
"""

from __future__ import annotations

import enum
from collections import deque
from typing import Iterable, NamedTuple

from .instance import Instance, Roster


class Status(enum.Enum):
    CONSISTENT = "CONSISTENT"
    FAILED = "FAILED"


class TrailError(RuntimeError):
    pass


class TraceEvent(NamedTuple):
    trigger: int | None  # variable whose change woke the propagator, None for initial runs
    affected: int
    constraint: int  # propagator id, see Model.props
    size_before: int
    size_after: int
    mask_after: int


class Propagator:
    """Base class: ``vars`` are watched; ``propagate`` returns False on failure."""

    name = "propagator"
    priority = 0  # 0 cheap hard, 1 expensive hard, 2 soft
    pid = -1
    vars: tuple[int, ...] = ()

    def propagate(self, m: "Model") -> bool:
        raise NotImplementedError


class Among(Propagator):
    """lo <= #{v in vars : v takes a value in mask} <= hi (bounds on the count)."""

    def __init__(self, name, vars, mask, lo, hi):
        self.name = name
        self.vars = tuple(vars)
        self.mask = mask
        self.lo = lo
        self.hi = hi

    def propagate(self, m):
        dom = m.dom
        mask = self.mask
        must = can = 0
        for v in self.vars:
            d = dom[v]
            if d & mask:
                can += 1
                if not d & ~mask:
                    must += 1
        if must > self.hi or can < self.lo:
            return False
        if can == must:
            return True
        if must == self.hi:
            for v in self.vars:
                d = dom[v]
                if d & mask and d & ~mask:
                    m.set_domain(v, d & ~mask)
        elif can == self.lo:
            for v in self.vars:
                d = dom[v]
                if d & mask and d & ~mask:
                    m.set_domain(v, d & mask)
        return True


class Forbidden(Propagator):
    """Forbids the tuple pattern: var p taking a value in masks[p] for every p."""

    def __init__(self, name, vars, masks):
        self.name = name
        self.vars = tuple(vars)
        self.masks = tuple(masks)

    def propagate(self, m):
        dom = m.dom
        escape = -1
        for p, v in enumerate(self.vars):
            if dom[v] & ~self.masks[p]:
                if escape >= 0:
                    return True
                escape = p
        if escape < 0:
            return False
        v = self.vars[escape]
        return m.set_domain(v, dom[v] & ~self.masks[escape])


class RowRules(Propagator):
    """Arc consistency on the conjunction of one nurse's row rules.

    The row is read by an automaton whose state tracks shifts worked, the
    current work run, nights worked, the current night run, rest days still
    owed after a night series, whether the previous shift was Late, and the
    run of worked weekends.  Values without a path from the start state to an
    accepting state (exactly ``total`` shifts) are pruned.

    Transitions may carry a cost (see ``penalty.RowCost``); the dynamic
    program then also yields the cheapest accepted path and, per value, the
    cheapest path through it.
    """

    priority = 1

    def __init__(self, name, vars, inst: Instance, nurse: int):
        self.name = name
        self.vars = tuple(vars)
        self.nurse = nurse
        hp = inst.hard_params
        codes = inst.codes
        self.n_values = len(codes)
        self.off = len(codes) - 1
        self.work_mask = (1 << self.off) - 1
        self.is_night = [s.is_night for s in inst.working] + [False]
        both = "L" in codes and "E" in codes
        self.late = codes.index("L") if both else -1
        self.early = codes.index("E") if both else -1
        self.total = inst.nurses[nurse].contract.total_shifts
        self.max_run = hp.max_consecutive_work
        self.max_nights = hp.max_nights
        self.max_night_run = hp.max_consecutive_nights
        self.rest = hp.post_night_rest_days
        weekends = inst.weekends()
        self.window = hp.weekend_window if 1 <= hp.weekend_window <= len(weekends) else 0
        # 0 weekday, 1 weekend day, 2 closing day of a weekend
        self.day_kind = [0] * len(self.vars)
        for we in weekends:
            for d in we:
                self.day_kind[d] = 1
            self.day_kind[we[-1]] = 2
        start = self._start()
        self._ids = {start: 0}
        self._states = [start]
        self._shifts = [0]
        self._next: dict[int, tuple[int, int]] = {}
        self._segments: dict[tuple, tuple[int, int]] = {}
        # a cost-carrying automaton over the same row; while it is active it
        # enforces these rules as well and this propagator stands aside
        self.covered_by = None

    def share_tables(self, other: "RowRules") -> None:
        """Use ``other``'s state and transition memos (same automaton, other row)."""
        self._ids, self._states, self._shifts = other._ids, other._states, other._shifts
        self._next, self._segments = other._next, other._segments

    def _start(self):
        return (0, 0, 0, 0, 0, False, 0, False)

    def _step(self, s, v, j):
        """Successor of hard state ``s`` reading value ``v`` on day ``j`` and its cost."""
        c, run, nights, nrun, rest, late, wrun, wcur = s[:8]
        if v == self.off:
            if nrun and self.rest:
                rest = self.rest - 1
            elif rest:
                rest -= 1
            run, nrun, late = 0, 0, False
        else:
            if rest or c >= self.total or run >= self.max_run:
                return None
            if self.is_night[v]:
                if nights >= self.max_nights or nrun >= self.max_night_run:
                    return None
                nights += 1
                nrun += 1
            elif nrun and self.rest:
                return None
            else:
                nrun = 0
            if late and v == self.early:
                return None
            c, run, late = c + 1, run + 1, v == self.late
        kind = self.day_kind[j]
        if kind and self.window:
            wcur = wcur or v != self.off
            if kind == 2:
                wrun = wrun + 1 if wcur else 0
                if wrun >= self.window:
                    return None
                wcur = False
        return (c, run, nights, nrun, rest, late, wrun, wcur), 0

    def _final(self, s) -> int:
        """Cost charged on an accepted state at the end of the horizon."""
        return 0

    def _successors(self, sid, j):
        """Per value, the (state, cost) reached from state ``sid`` on day ``j``, or None."""
        key = sid * len(self.vars) + j
        out = self._next.get(key)
        if out is not None:
            return out
        if len(self._next) > 500_000:
            self._next.clear()
        state = self._states[sid]
        row = []
        for v in range(self.n_values):
            res = self._step(state, v, j)
            if res is None:
                row.append(None)
                continue
            ns, cost = res
            nid = self._ids.get(ns)
            if nid is None:
                nid = len(self._states)
                self._ids[ns] = nid
                self._states.append(ns)
                self._shifts.append(ns[0])
            row.append((nid, cost))
        out = tuple(row)
        self._next[key] = out
        return out

    def _run_fixed(self, sid, j, vals):
        """(state, cost) after reading the fixed ``vals`` from day ``j``; None if rejected."""
        key = (sid, j, vals)
        try:
            return self._segments[key]
        except KeyError:
            pass
        ns, total = sid, 0
        out = None
        for d, v in enumerate(vals, start=j):
            e = self._successors(ns, d)[v]
            if e is None:
                break
            ns, cost = e
            total += cost
        else:
            out = (ns, total)
        if len(self._segments) > 200_000:
            self._segments.clear()
        self._segments[key] = out
        return out

    def solve_row(self, doms, offsets=None):
        """Run the dynamic program over the row domains.

        Returns None when no accepted path exists, else ``(best, through)``
        where ``best`` is the cheapest accepted path cost and ``through[j]``
        maps each supported value of free day ``j`` to the cheapest accepted
        path using it (fixed days are omitted).  ``offsets[j][v]``, when
        given, is added to the cost of taking value ``v`` on day ``j``
        (``offsets[j]`` may be None for no offset on that day).
        """
        n = len(doms)
        K = self.n_values
        total = self.total
        shifts = self._shifts
        memo = self._next
        successors = self._successors
        run_fixed = self._run_fixed
        # split the row into free days and maximal runs of fixed days
        steps = []
        j = 0
        while j < n:
            d = doms[j]
            if d & (d - 1):
                steps.append((j, None, [v for v in range(K) if d >> v & 1]))
                j += 1
                continue
            k = j
            while k + 1 < n and not doms[k + 1] & (doms[k + 1] - 1):
                k += 1
            steps.append((j, tuple(doms[t].bit_length() - 1 for t in range(j, k + 1)), None))
            j = k + 1
        # can[j] / must[j]: days from j on that may / must be worked
        work = self.work_mask
        can = [0] * (n + 1)
        must = [0] * (n + 1)
        for t in range(n - 1, -1, -1):
            d = doms[t]
            can[t] = can[t + 1] + (1 if d & work else 0)
            must[t] = must[t + 1] + (0 if d & ~work else 1)
        cur = {0: 0}
        layers = []
        edges = []
        for j, fixed, vals in steps:
            # states must still be able to reach exactly ``total`` shifts
            end = j + (1 if fixed is None else len(fixed))
            need = total - can[end]
            cap = total - must[end]
            nxt: dict[int, int] = {}
            ej = []
            if fixed is None:
                off = offsets[j] if offsets is not None else None
                for s, fc in cur.items():
                    succ = memo.get(s * n + j) or successors(s, j)
                    for v in vals:
                        e = succ[v]
                        if e is None:
                            continue
                        ns, c = e
                        if not need <= shifts[ns] <= cap:
                            continue
                        if off is not None:
                            c += off[v]
                        ej.append((s, v, ns, c))
                        c += fc
                        old = nxt.get(ns)
                        if old is None or c < old:
                            nxt[ns] = c
            else:
                extra = 0
                if offsets is not None:
                    for d, v in enumerate(fixed, start=j):
                        if offsets[d] is not None:
                            extra += offsets[d][v]
                for s, fc in cur.items():
                    e = run_fixed(s, j, fixed)
                    if e is None:
                        continue
                    ns, c = e
                    if not need <= shifts[ns] <= cap:
                        continue
                    c += extra
                    ej.append((s, -1, ns, c))
                    c += fc
                    old = nxt.get(ns)
                    if old is None or c < old:
                        nxt[ns] = c
            if not nxt:
                return None
            layers.append(cur)
            edges.append(ej)
            cur = nxt
        final = self._final
        states = self._states
        alive = {s: final(states[s]) for s in cur if shifts[s] == total}
        if not alive:
            return None
        through = {}
        for (j, fixed, _), fwd, ej in zip(reversed(steps), reversed(layers), reversed(edges)):
            prev: dict[int, int] = {}
            if fixed is None:
                best_v: dict[int, int] = {}
                for s, v, ns, c in ej:
                    b = alive.get(ns)
                    if b is None:
                        continue
                    tot = c + b
                    old = prev.get(s)
                    if old is None or tot < old:
                        prev[s] = tot
                    t = fwd[s] + tot
                    old = best_v.get(v)
                    if old is None or t < old:
                        best_v[v] = t
                through[j] = best_v
            else:
                for s, _, ns, c in ej:
                    b = alive.get(ns)
                    if b is None:
                        continue
                    tot = c + b
                    old = prev.get(s)
                    if old is None or tot < old:
                        prev[s] = tot
            alive = prev
        return alive[0], through

    def propagate(self, m):
        if self.covered_by is not None and self.covered_by.active:
            return True
        doms = [m.dom[v] for v in self.vars]
        res = self.solve_row(doms)
        if res is None:
            return False
        for j, best_v in res[1].items():
            d = doms[j]
            sup = 0
            for v in best_v:
                sup |= 1 << v
            if d & ~sup:
                m.set_domain(self.vars[j], d & sup)
        return True


class FreeWeekend(Propagator):
    """In every run of ``window`` consecutive weekends at least one is all off."""

    def __init__(self, name, weekends, window, off_bit):
        self.name = name
        self.weekends = tuple(tuple(w) for w in weekends)
        self.vars = tuple(v for w in self.weekends for v in w)
        self.window = window
        self.off = off_bit

    def propagate(self, m):
        dom = m.dom
        off = self.off
        changed = True
        while changed:
            changed = False
            can_free = [all(dom[v] & off for v in we) for we in self.weekends]
            for s in range(len(self.weekends) - self.window + 1):
                free = [t for t in range(s, s + self.window) if can_free[t]]
                if not free:
                    return False
                if len(free) == 1:
                    for v in self.weekends[free[0]]:
                        if dom[v] != off:
                            m.set_domain(v, off)
                            changed = True
        return True


class Model:
    def __init__(self, inst: Instance):
        self.inst = inst
        self.n_nurses = inst.n_nurses
        self.n_days = inst.horizon_days
        self.n_values = len(inst.shift_types)
        self.full = (1 << self.n_values) - 1
        self.off_bit = 1 << (self.n_values - 1)
        self.work_mask = self.full & ~self.off_bit
        self.night_mask = sum(1 << k for k, s in enumerate(inst.working) if s.is_night)
        n = self.n_nurses * self.n_days
        self.dom = [self.full] * n
        self.frozen = [False] * n
        self.props: list[Propagator] = []
        self.watch: list[list[int]] = [[] for _ in range(n)]
        self.trail: list[tuple[list, int, object]] = []
        self.marks: list[int] = []
        self._queues: tuple[deque[int], ...] = (deque(), deque(), deque())
        self._queued: list[bool] = []
        self._woken_by: list[int | None] = []
        self._current = -1
        self._trigger: int | None = None
        self.tracing = True
        self.trace: list[TraceEvent] = []
        # soft layer, filled in by penalty.post_soft_constraints
        self.viol: list[int] = []
        self.objective = None
        # one automaton per (propagator class, contract) whose memos are shared
        self.automata: dict = {}

    # -- variables ---------------------------------------------------------

    @property
    def n_vars(self) -> int:
        return len(self.dom)

    def var(self, nurse: int, day: int) -> int:
        return nurse * self.n_days + day

    def cell(self, v: int) -> tuple[int, int]:
        return divmod(v, self.n_days)

    def row_vars(self, nurse: int) -> range:
        return range(nurse * self.n_days, (nurse + 1) * self.n_days)

    def is_fixed(self, v: int) -> bool:
        d = self.dom[v]
        return d & (d - 1) == 0

    def value(self, v: int) -> int:
        """Value index of a fixed variable."""
        return self.dom[v].bit_length() - 1

    def values(self, v: int) -> list[int]:
        d = self.dom[v]
        return [k for k in range(self.n_values) if d >> k & 1]

    def to_roster(self) -> Roster:
        codes = self.inst.codes
        rows = []
        for i in range(self.n_nurses):
            row = []
            for v in self.row_vars(i):
                if not self.is_fixed(v):
                    raise ValueError(f"cell {self.cell(v)} is not fixed")
                row.append(codes[self.value(v)])
            rows.append("".join(row))
        return Roster(tuple(rows))

    # -- propagators -------------------------------------------------------

    def add(self, prop: Propagator) -> int:
        pid = len(self.props)
        prop.pid = pid
        self.props.append(prop)
        self._queued.append(False)
        self._woken_by.append(None)
        for v in prop.vars:
            self.watch[v].append(pid)
        self._schedule(pid, None)
        return pid

    def _schedule(self, pid: int, trigger: int | None) -> None:
        self._queued[pid] = True
        self._woken_by[pid] = trigger
        self._queues[self.props[pid].priority].append(pid)

    def schedule_all(self, priority: int | None = None) -> None:
        """Queue every propagator, or only those of the given priority."""
        for pid, p in enumerate(self.props):
            if not self._queued[pid] and (priority is None or p.priority == priority):
                self._schedule(pid, None)

    def _flush(self) -> None:
        for q in self._queues:
            for pid in q:
                self._queued[pid] = False
            q.clear()

    # -- state changes -----------------------------------------------------

    def write(self, store: list, i: int, value) -> None:
        """Trailed write into any per-model store."""
        if self.marks:
            self.trail.append((store, i, store[i]))
        store[i] = value

    def set_domain(self, v: int, new: int) -> bool:
        old = self.dom[v]
        if new == old:
            return True
        if new == 0:
            return False
        if self.marks:
            self.trail.append((self.dom, v, old))
        self.dom[v] = new
        cur = self._current
        if cur >= 0 and self.tracing:
            self.trace.append(
                TraceEvent(self._trigger, v, cur, old.bit_count(), new.bit_count(), new)
            )
        queued = self._queued
        for pid in self.watch[v]:
            if pid != cur and not queued[pid]:
                self._schedule(pid, v)
        return True

    def assign(self, v: int, value: int) -> bool:
        d = self.dom[v]
        if not d >> value & 1:
            return False
        return self.set_domain(v, 1 << value)

    def remove(self, v: int, value: int) -> bool:
        return self.set_domain(v, self.dom[v] & ~(1 << value))

    def propagate(self) -> tuple[Status, list[TraceEvent]]:
        start = len(self.trace)
        q0, q1, q2 = self._queues
        props, queued, woken_by = self.props, self._queued, self._woken_by
        while q0 or q1 or q2:
            pid = q0.popleft() if q0 else (q1.popleft() if q1 else q2.popleft())
            queued[pid] = False
            self._current = pid
            self._trigger = woken_by[pid]
            if not props[pid].propagate(self):
                self._current = -1
                self._flush()
                return Status.FAILED, self.trace[start:]
        self._current = -1
        return Status.CONSISTENT, self.trace[start:]

    def reset_trace(self) -> None:
        self.trace = []

    # -- trail -------------------------------------------------------------

    def push(self) -> None:
        self.marks.append(len(self.trail))

    def pop(self) -> None:
        if not self.marks:
            raise TrailError("POP_ON_EMPTY_TRAIL")
        mark = self.marks.pop()
        trail = self.trail
        while len(trail) > mark:
            store, i, old = trail.pop()
            store[i] = old
        self._flush()

    @property
    def depth(self) -> int:
        return len(self.marks)

    def snapshot(self) -> tuple:
        obj = self.objective
        stores = () if obj is None else (tuple(obj.store), tuple(obj.rule_sum), tuple(obj.row_dp))
        return tuple(self.dom), tuple(self.frozen), tuple(self.viol), stores

    # -- relaxation --------------------------------------------------------

    def freeze_except(self, cells: Iterable[int], incumbent: Roster) -> None:
        """Fix every cell outside ``cells`` to the incumbent and relax the rest.

        Runs at trail depth zero; the caller propagates afterwards.
        """
        if self.marks:
            raise TrailError("freeze_except needs an empty trail")
        self.relax(cells, incumbent)
        self.reset_trace()

    def reset(self) -> None:
        """Back to the root: every cell unfrozen with its full domain, then propagated."""
        if self.marks:
            raise TrailError("reset needs an empty trail")
        for v in range(self.n_vars):
            self.dom[v] = self.full
            self.frozen[v] = False
        self._flush()
        self.schedule_all()
        self.reset_trace()
        return self.propagate()[0]

    def relax(self, cells: Iterable[int], incumbent: Roster) -> None:
        """Like ``freeze_except`` but trailed, so it can be undone by ``pop``."""
        free = set(cells)
        index = {c: k for k, c in enumerate(self.inst.codes)}
        for i, row in enumerate(incumbent.cells):
            base = i * self.n_days
            for j, code in enumerate(row):
                v = base + j
                if v in free:
                    dom, frozen = self.full, False
                else:
                    dom, frozen = 1 << index[code], True
                if self.dom[v] != dom:
                    self.write(self.dom, v, dom)
                if self.frozen[v] != frozen:
                    self.write(self.frozen, v, frozen)
        self._flush()
        self.schedule_all()


def freeze_except(m: Model, cells: Iterable[int], incumbent: Roster) -> None:
    m.freeze_except(cells, incumbent)


def propagate(m: Model) -> tuple[Status, list[TraceEvent]]:
    return m.propagate()


def _windows(vars_, length):
    return [vars_[s:s + length] for s in range(len(vars_) - length + 1)]


def build_model(inst: Instance, decompose: bool = True) -> Model:
    """Model with one variable per cell and every hard rule posted.

    Coverage is one ``Among`` per (day, shift code) and each row is guarded by
    a ``RowRules`` automaton.  With ``decompose`` the row rules are also posted
    one by one (counters and forbidden windows).  The automaton subsumes them,
    but these cheap propagators detect most dead ends before it has to run,
    which makes the search noticeably faster.
    """
    m = Model(inst)
    hp = inst.hard_params
    codes = inst.codes
    n_nurses = inst.n_nurses

    for j in range(inst.horizon_days):
        column = [m.var(i, j) for i in range(n_nurses)]
        need = list(inst.demand[j])
        need.append(n_nurses - sum(need))
        for k, count in enumerate(need):
            m.add(Among(f"COVERAGE d={j} {codes[k]}", column, 1 << k, count, count))

    night, work, off = m.night_mask, m.work_mask, m.off_bit
    rest = hp.post_night_rest_days
    late_early = "L" in codes and "E" in codes
    weekends = inst.weekends()
    for i, nurse in enumerate(inst.nurses):
        row = list(m.row_vars(i))
        if not decompose:
            m.add(_row_rules(m, inst, i, row))
            continue
        total = nurse.contract.total_shifts
        m.add(Among(f"TOTAL_SHIFTS n={i}", row, work, total, total))
        if night:
            m.add(Among(f"MAX_NIGHTS n={i}", row, night, 0, hp.max_nights))
            for w in _windows(row, hp.max_consecutive_nights + 1):
                m.add(Forbidden(f"MAX_CONSECUTIVE_NIGHTS n={i} d={m.cell(w[0])[1]}", w, [night] * len(w)))
            for t in range(1, rest + 1):
                pattern = [night] + [off] * (t - 1) + [work & ~night if t == 1 else work]
                for w in _windows(row, len(pattern)):
                    m.add(Forbidden(f"NIGHT_REST n={i} d={m.cell(w[0])[1]}", w, pattern))
        for w in _windows(row, hp.max_consecutive_work + 1):
            m.add(Forbidden(f"MAX_CONSECUTIVE_WORK n={i} d={m.cell(w[0])[1]}", w, [work] * len(w)))
        if 1 <= hp.weekend_window <= len(weekends):
            m.add(FreeWeekend(f"FREE_WEEKEND n={i}", [[row[d] for d in we] for we in weekends], hp.weekend_window, off))
        if late_early:
            pattern = [1 << codes.index("L"), 1 << codes.index("E")]
            for w in _windows(row, 2):
                m.add(Forbidden(f"LATE_EARLY n={i} d={m.cell(w[0])[1]}", w, pattern))
        m.add(_row_rules(m, inst, i, row))
    return m


def _row_rules(m: Model, inst: Instance, i: int, row) -> RowRules:
    p = RowRules(f"ROW_RULES n={i}", row, inst, i)
    key = (RowRules, inst.nurses[i].contract)
    if key in m.automata:
        p.share_tables(m.automata[key])
    else:
        m.automata[key] = p
    return p
