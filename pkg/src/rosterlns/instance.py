"""Problem data, the instance/roster file formats and the hard-constraint checker."""

from __future__ import annotations

import enum
import re
from dataclasses import dataclass, field

OFF = "O"

WEEKDAYS = ("MON", "TUE", "WED", "THU", "FRI", "SAT", "SUN")


class InstanceError(ValueError):
    """Raised for malformed or inconsistent instance files.

    ``kind`` is ``"SYNTAX"`` or ``"SEMANTIC"``; ``line``/``column`` are 1-based
    and ``None`` when the problem is not tied to a location.
    """

    def __init__(self, kind: str, message: str, line: int | None = None, column: int | None = None):
        self.kind = kind
        self.line = line
        self.column = column
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(f"{kind}: {message}{where}")


class DimensionMismatch(ValueError):
    pass


class ContractKind(enum.Enum):
    FULL_TIME = "FULL"
    PART_TIME = "PART"


@dataclass(frozen=True)
class ShiftType:
    code: str
    is_night: bool = False
    label: str = ""


@dataclass(frozen=True)
class Contract:
    kind: ContractKind
    total_shifts: int
    weekly_range: tuple[int, int]
    series_range: tuple[int, int]


@dataclass(frozen=True)
class Nurse:
    id: int
    name: str
    contract: Contract


@dataclass(frozen=True)
class PenaltyWeights:
    single_night: int = 100
    stand_alone_shift: int = 100
    weekend_one_shift: int = 100
    single_day_off: int = 10
    weekly_count_unit: int = 1
    series_length_unit: int = 1
    # exponent applied to the deviation of the two counting clauses
    weekly_exponent: int = 2
    series_exponent: int = 2


@dataclass(frozen=True)
class HardParams:
    max_nights: int = 4
    max_consecutive_nights: int = 3
    max_consecutive_work: int = 6
    weekend_window: int = 3
    post_night_rest_hours: int = 48

    @property
    def post_night_rest_days(self) -> int:
        return self.post_night_rest_hours // 24


@dataclass(frozen=True)
class Instance:
    horizon_days: int
    first_day_of_week: int  # 0 = Monday
    nurses: tuple[Nurse, ...]
    shift_types: tuple[ShiftType, ...]  # working shifts first, OFF last
    demand: tuple[tuple[int, ...], ...]  # [day][working shift index]
    weights: PenaltyWeights = field(default_factory=PenaltyWeights)
    hard_params: HardParams = field(default_factory=HardParams)
    contracts: tuple[Contract, ...] = ()

    @property
    def n_nurses(self) -> int:
        return len(self.nurses)

    @property
    def codes(self) -> tuple[str, ...]:
        return tuple(s.code for s in self.shift_types)

    @property
    def working(self) -> tuple[ShiftType, ...]:
        return self.shift_types[:-1]

    def value_of(self, code: str) -> int:
        return self.codes.index(code)

    def weekday(self, day: int) -> int:
        return (self.first_day_of_week + day) % 7

    def weekends(self) -> list[tuple[int, ...]]:
        """Saturday/Sunday day groups inside the horizon, in order.

        A weekend cut by the horizon boundary keeps only its in-horizon day.
        """
        groups: list[list[int]] = []
        for d in range(self.horizon_days):
            wd = self.weekday(d)
            if wd == 5 or (wd == 6 and (d == 0 or self.weekday(d - 1) != 5)):
                groups.append([d])
            elif wd == 6:
                groups[-1].append(d)
        return [tuple(g) for g in groups]

    def full_weeks(self) -> list[range]:
        """Monday-to-Sunday blocks lying completely inside the horizon."""
        start = (7 - self.first_day_of_week) % 7
        return [range(s, s + 7) for s in range(start, self.horizon_days - 6, 7)]


@dataclass(frozen=True)
class Roster:
    cells: tuple[str, ...]  # one string per nurse, one character per day

    @classmethod
    def from_rows(cls, rows) -> "Roster":
        return cls(tuple("".join(r) for r in rows))

    @property
    def n_nurses(self) -> int:
        return len(self.cells)

    @property
    def n_days(self) -> int:
        return len(self.cells[0]) if self.cells else 0

    def __getitem__(self, nd: tuple[int, int]) -> str:
        return self.cells[nd[0]][nd[1]]

    def __str__(self) -> str:
        return "\n".join(self.cells)


# ---------------------------------------------------------------------------
# Parsing / serialization
# ---------------------------------------------------------------------------

_CONTRACT_RE = re.compile(r"^total=(\d+)$|^weekly=(\d+)\.\.(\d+)$|^series=(\d+)\.\.(\d+)$")
_WEIGHT_KEYS = {
    "single_night": "single_night",
    "stand_alone": "stand_alone_shift",
    "weekend_one": "weekend_one_shift",
    "single_off": "single_day_off",
    "weekly_unit": "weekly_count_unit",
    "series_unit": "series_length_unit",
    "weekly_exp": "weekly_exponent",
    "series_exp": "series_exponent",
}
_HARD_KEYS = {
    "max_nights": "max_nights",
    "max_consecutive_nights": "max_consecutive_nights",
    "max_consecutive_work": "max_consecutive_work",
    "weekend_window": "weekend_window",
    "post_night_rest_hours": "post_night_rest_hours",
}


def _int(tok: str, lineno: int, col: int) -> int:
    if not tok.isdigit():
        raise InstanceError("SYNTAX", f"expected a non-negative integer, got {tok!r}", lineno, col)
    return int(tok)


def _key_values(tokens, lineno, cols, keys):
    out = {}
    for tok, col in zip(tokens, cols):
        k, sep, v = tok.partition("=")
        if not sep or k not in keys:
            raise InstanceError("SYNTAX", f"unknown setting {tok!r}", lineno, col)
        out[keys[k]] = _int(v, lineno, col + len(k) + 1)
    return out


def parse_instance(text: str) -> Instance:
    horizon = None
    shifts: list[ShiftType] = []
    nurse_decl: list[tuple[str, str, int]] = []
    contracts: dict[str, Contract] = {}
    demand_decl: list[tuple[int, str, int, int, int]] = []
    weights = {}
    hard = {}

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        tokens, cols = [], []
        for m in re.finditer(r"\S+", line):
            tokens.append(m.group())
            cols.append(m.start() + 1)
        if not tokens:
            continue
        key, args, acols = tokens[0], tokens[1:], cols[1:]

        if key == "HORIZON":
            if len(args) != 2:
                raise InstanceError("SYNTAX", "HORIZON takes <days> <weekday>", lineno, cols[0])
            if args[1] not in WEEKDAYS:
                raise InstanceError("SYNTAX", f"unknown weekday {args[1]!r}", lineno, acols[1])
            horizon = (_int(args[0], lineno, acols[0]), WEEKDAYS.index(args[1]), lineno)
        elif key == "SHIFT":
            if len(args) < 2 or args[1] not in ("NIGHT", "DAY"):
                raise InstanceError("SYNTAX", "SHIFT takes <code> <NIGHT|DAY> <label>", lineno, cols[0])
            code = args[0]
            if not re.fullmatch(r"[A-Z]", code):
                raise InstanceError("SYNTAX", f"shift code must be one uppercase letter, got {code!r}", lineno, acols[0])
            if code == OFF:
                raise InstanceError("SEMANTIC", "code O is reserved for days off", lineno, acols[0])
            if any(s.code == code for s in shifts):
                raise InstanceError("SEMANTIC", f"duplicate shift code {code}", lineno, acols[0])
            label = line[acols[2] - 1:].strip() if len(args) > 2 else ""
            shifts.append(ShiftType(code, args[1] == "NIGHT", label))
        elif key == "NURSE":
            if len(args) != 2 or args[1] not in ("FULL", "PART"):
                raise InstanceError("SYNTAX", "NURSE takes <name> <FULL|PART>", lineno, cols[0])
            nurse_decl.append((args[0], args[1], lineno))
        elif key == "CONTRACT":
            if len(args) != 4 or args[0] not in ("FULL", "PART"):
                raise InstanceError("SYNTAX", "CONTRACT takes <FULL|PART> total=N weekly=A..B series=A..B", lineno, cols[0])
            vals = {}
            for tok, col in zip(args[1:], acols[1:]):
                m = _CONTRACT_RE.match(tok)
                if not m:
                    raise InstanceError("SYNTAX", f"bad contract setting {tok!r}", lineno, col)
                if m.group(1) is not None:
                    vals["total"] = int(m.group(1))
                elif m.group(2) is not None:
                    vals["weekly"] = (int(m.group(2)), int(m.group(3)))
                else:
                    vals["series"] = (int(m.group(4)), int(m.group(5)))
            if len(vals) != 3:
                raise InstanceError("SYNTAX", "CONTRACT needs total, weekly and series", lineno, cols[0])
            for name in ("weekly", "series"):
                lo, hi = vals[name]
                if lo > hi:
                    raise InstanceError("SEMANTIC", f"{name} range {lo}..{hi} is inverted", lineno, cols[0])
            if args[0] in contracts:
                raise InstanceError("SEMANTIC", f"contract {args[0]} declared twice", lineno, cols[0])
            contracts[args[0]] = Contract(ContractKind(args[0]), vals["total"], vals["weekly"], vals["series"])
        elif key == "DEMAND":
            if len(args) < 1:
                raise InstanceError("SYNTAX", "DEMAND takes <day> <code>=<count> ...", lineno, cols[0])
            day = _int(args[0], lineno, acols[0])
            for tok, col in zip(args[1:], acols[1:]):
                code, sep, count = tok.partition("=")
                if not sep:
                    raise InstanceError("SYNTAX", f"expected <code>=<count>, got {tok!r}", lineno, col)
                demand_decl.append((day, code, _int(count, lineno, col + len(code) + 1), lineno, col))
        elif key == "WEIGHTS":
            weights.update(_key_values(args, lineno, acols, _WEIGHT_KEYS))
        elif key == "HARD":
            hard.update(_key_values(args, lineno, acols, _HARD_KEYS))
        else:
            raise InstanceError("SYNTAX", f"unknown directive {key!r}", lineno, cols[0])

    if horizon is None:
        raise InstanceError("SEMANTIC", "missing HORIZON")
    days, first_wd, hline = horizon
    if days < 7 or days % 7:
        raise InstanceError("SEMANTIC", f"horizon {days} is not a positive multiple of 7", hline, 1)
    if not shifts:
        raise InstanceError("SEMANTIC", "no working shift types declared")
    shift_types = tuple(shifts) + (ShiftType(OFF, False, "Off"),)
    index = {s.code: k for k, s in enumerate(shifts)}

    nurses = []
    for i, (name, kind, lineno) in enumerate(nurse_decl):
        if kind not in contracts:
            raise InstanceError("SEMANTIC", f"no CONTRACT {kind} declared for nurse {name}", lineno, 1)
        nurses.append(Nurse(i, name, contracts[kind]))
    if not nurses:
        raise InstanceError("SEMANTIC", "no nurses declared")

    demand = [[0] * len(shifts) for _ in range(days)]
    for day, code, count, lineno, col in demand_decl:
        if day >= days:
            raise InstanceError("SEMANTIC", f"demand day {day} outside horizon", lineno, col)
        if code == OFF:
            raise InstanceError("SEMANTIC", "demand for the off code is not allowed", lineno, col)
        if code not in index:
            raise InstanceError("SEMANTIC", f"demand for undeclared shift {code}", lineno, col)
        demand[day][index[code]] = count
    for day, row in enumerate(demand):
        if sum(row) > len(nurses):
            raise InstanceError("SEMANTIC", f"day {day} demands {sum(row)} shifts but only {len(nurses)} nurses exist")

    order = [k for k in ("FULL", "PART") if k in contracts]
    return Instance(
        horizon_days=days,
        first_day_of_week=first_wd,
        nurses=tuple(nurses),
        shift_types=shift_types,
        demand=tuple(tuple(r) for r in demand),
        weights=PenaltyWeights(**weights),
        hard_params=HardParams(**hard),
        contracts=tuple(contracts[k] for k in order),
    )


def serialize_instance(inst: Instance) -> str:
    lines = [f"HORIZON {inst.horizon_days} {WEEKDAYS[inst.first_day_of_week]}"]
    for s in inst.working:
        lines.append(f"SHIFT {s.code} {'NIGHT' if s.is_night else 'DAY'} {s.label}".rstrip())
    contracts = list(inst.contracts)
    for n in inst.nurses:
        if n.contract not in contracts:
            contracts.append(n.contract)
    for c in contracts:
        lines.append(
            f"CONTRACT {c.kind.value} total={c.total_shifts} weekly={c.weekly_range[0]}..{c.weekly_range[1]}"
            f" series={c.series_range[0]}..{c.series_range[1]}"
        )
    for n in inst.nurses:
        lines.append(f"NURSE {n.name} {n.contract.kind.value}")
    w = inst.weights
    lines.append(" ".join(["WEIGHTS"] + [f"{k}={getattr(w, v)}" for k, v in _WEIGHT_KEYS.items()]))
    h = inst.hard_params
    lines.append(" ".join(["HARD"] + [f"{k}={getattr(h, v)}" for k, v in _HARD_KEYS.items()]))
    for day, row in enumerate(inst.demand):
        pairs = " ".join(f"{s.code}={c}" for s, c in zip(inst.working, row))
        lines.append(f"DEMAND {day} {pairs}")
    return "\n".join(lines) + "\n"


def load_instance(path) -> Instance:
    with open(path, encoding="utf-8") as fh:
        return parse_instance(fh.read())


def parse_roster(text: str, inst: Instance | None = None) -> Roster:
    rows = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    roster = Roster(tuple(rows))
    if inst is not None:
        check_dimensions(inst, roster)
        allowed = set(inst.codes)
        for i, row in enumerate(rows):
            for j, c in enumerate(row):
                if c not in allowed:
                    raise InstanceError("SEMANTIC", f"undeclared shift code {c!r}", i + 1, j + 1)
    return roster


def load_roster(path, inst: Instance | None = None) -> Roster:
    with open(path, encoding="utf-8") as fh:
        return parse_roster(fh.read(), inst)


def check_dimensions(inst: Instance, r: Roster) -> None:
    if r.n_nurses != inst.n_nurses or any(len(row) != inst.horizon_days for row in r.cells):
        raise DimensionMismatch(
            f"roster is {r.n_nurses}x{r.n_days}, instance needs {inst.n_nurses}x{inst.horizon_days}"
        )


# ---------------------------------------------------------------------------
# Hard-constraint checker
# ---------------------------------------------------------------------------

class HardRule(enum.IntEnum):
    COVERAGE = 0
    TOTAL_SHIFTS = 1
    MAX_NIGHTS = 2
    MAX_CONSECUTIVE_NIGHTS = 3
    MAX_CONSECUTIVE_WORK = 4
    FREE_WEEKEND = 5
    NIGHT_REST = 6
    LATE_EARLY = 7


@dataclass(frozen=True, order=True)
class Violation:
    rule: HardRule
    nurse: int  # -1 for column rules
    first_day: int
    last_day: int
    detail: str = ""

    def __str__(self) -> str:
        who = "all" if self.nurse < 0 else f"nurse {self.nurse}"
        return f"{self.rule.name} {who} days {self.first_day}..{self.last_day} {self.detail}".rstrip()


def _runs(row: str, pred):
    """Yield (start, end) of maximal runs where ``pred(code)`` holds."""
    j, n = 0, len(row)
    while j < n:
        if pred(row[j]):
            k = j
            while k + 1 < n and pred(row[k + 1]):
                k += 1
            yield j, k
            j = k + 1
        else:
            j += 1


def validate_roster(inst: Instance, r: Roster) -> list[Violation]:
    check_dimensions(inst, r)
    hp = inst.hard_params
    nights = {s.code for s in inst.working if s.is_night}
    out: list[Violation] = []

    for j in range(inst.horizon_days):
        column = [row[j] for row in r.cells]
        for s, need in zip(inst.working, inst.demand[j]):
            have = column.count(s.code)
            if have != need:
                out.append(Violation(HardRule.COVERAGE, -1, j, j, f"{s.code} has {have} needs {need}"))

    rest = hp.post_night_rest_days
    weekends = inst.weekends()
    for i, (nurse, row) in enumerate(zip(inst.nurses, r.cells)):
        last = len(row) - 1
        worked = sum(c != OFF for c in row)
        if worked != nurse.contract.total_shifts:
            out.append(Violation(HardRule.TOTAL_SHIFTS, i, 0, last, f"{worked} shifts, needs {nurse.contract.total_shifts}"))
        n_nights = sum(c in nights for c in row)
        if n_nights > hp.max_nights:
            out.append(Violation(HardRule.MAX_NIGHTS, i, 0, last, f"{n_nights} nights"))
        for a, b in _runs(row, lambda c: c in nights):
            if b - a + 1 > hp.max_consecutive_nights:
                out.append(Violation(HardRule.MAX_CONSECUTIVE_NIGHTS, i, a, b))
        for a, b in _runs(row, lambda c: c != OFF):
            if b - a + 1 > hp.max_consecutive_work:
                out.append(Violation(HardRule.MAX_CONSECUTIVE_WORK, i, a, b))
        worked_we = [any(row[d] != OFF for d in we) for we in weekends]
        w = hp.weekend_window  # 0 disables the rule
        for start in range(0, len(weekends) - w + 1 if w >= 1 else 0):
            if all(worked_we[start:start + w]):
                out.append(Violation(HardRule.FREE_WEEKEND, i, weekends[start][0], weekends[start + w - 1][-1]))
        for a, b in _runs(row, lambda c: c in nights):
            span = row[b + 1:b + 1 + rest]
            if any(c != OFF for c in span):
                out.append(Violation(HardRule.NIGHT_REST, i, a, min(b + rest, last)))
        if "L" in inst.codes and "E" in inst.codes:
            for j in range(last):
                if row[j] == "L" and row[j + 1] == "E":
                    out.append(Violation(HardRule.LATE_EARLY, i, j, j + 1))
    return sorted(out)
