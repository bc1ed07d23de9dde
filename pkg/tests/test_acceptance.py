"""The ten acceptance criteria, each reporting one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are
repeated in the "acceptance criteria" section of the terminal summary.
The bundled-instance runs are computed once and shared by criteria 5-7.
"""

import csv
import io
import random
import time

import pytest

from oracles import TINY_SEEDS, check_soundness, mu_reference, tiny_case
from rosterlns import bundled_instance, bundled_instance_path, parse_instance, roster_cost, soft_card_mu
from rosterlns.cli import format_mean, main
from rosterlns.instance import Roster
from rosterlns.lns import LnsConfig, Strategy, fragment_propagation, prepare_model, run_lns
from rosterlns.search import Budget, ImproveRule, Infeasible, Outcome, construct_initial, reoptimize

SEEDS = range(10)
SWEEPS = 4


# --- 1. counting measure oracle ---------------------------------------------------

def test_01_mu_oracle(report):
    t0 = time.perf_counter()
    mismatches = [(c, lb, ub) for lb in range(11) for ub in range(lb, 11) for c in range(21)
                  if soft_card_mu(c, lb, ub) != mu_reference(c, lb, ub)]
    elapsed = time.perf_counter() - t0
    ok = not mismatches and elapsed < 1.0
    report(1, ok, f"soft_card_mu == brute force on card 0..20, bounds 0..10 "
                  f"({len(mismatches)} mismatches, {elapsed:.3f} s < 1 s)")
    assert ok


# --- 2. worked example -------------------------------------------------------------

def test_02_worked_example(report):
    inst = parse_instance(
        "HORIZON 7 MON\nSHIFT D DAY Day\nCONTRACT FULL total=3 weekly=4..5 series=1..7\nNURSE a FULL\n"
        "WEIGHTS single_night=0 stand_alone=0 weekend_one=0 single_off=0 weekly_unit=100 series_unit=0 "
        "weekly_exp=1\n"
    )
    total = roster_cost(inst, Roster.from_rows(["DDDOOOO"])).total
    report(2, total == 100, f"DDDOOOO with w=100, range [4,5], exponent 1 costs {total} (expected 100)")
    assert total == 100


# --- 3. branch-and-bound optimality --------------------------------------------------

def test_03_best_improved_equals_enumeration(report):
    t0 = time.perf_counter()
    checked = feasible = 0
    failures = []
    for seed in TINY_SEEDS:
        inst, enum = tiny_case(seed)
        checked += 1
        try:
            m = prepare_model(inst)
            init = construct_initial(m, seed=seed)
        except Infeasible:
            if enum.optimum is not None:
                failures.append((seed, "construction failed on a feasible instance"))
            continue
        if enum.optimum is None:
            failures.append((seed, "construction succeeded on an infeasible instance"))
            continue
        feasible += 1
        cells = range(m.n_vars)
        m.freeze_except(cells, init)
        res = reoptimize(m, cells, init, rule=ImproveRule.BEST_IMPROVED, budget=Budget(max_nodes=None))
        best = res.cost if res.outcome is Outcome.IMPROVED else roster_cost(inst, init).total
        if best != enum.optimum or not res.complete:
            failures.append((seed, best, enum.optimum))
    elapsed = time.perf_counter() - t0
    ok = not failures and feasible >= 20 and elapsed < 60
    report(3, ok, f"BEST_IMPROVED over the full grid == enumerated optimum on {feasible} feasible "
                  f"tiny instances (+{checked - feasible} infeasible agreed), {elapsed:.1f} s < 60 s; "
                  f"failures {failures}")
    assert ok


# --- 4. propagation soundness -------------------------------------------------------

def test_04_propagation_soundness(report):
    failures = []
    for seed in TINY_SEEDS:
        try:
            check_soundness(seed, samples=60)
        except AssertionError as exc:
            failures.append((seed, str(exc)))
    ok = not failures
    report(4, ok, f"no pruned value occurs in a feasible completion: {len(TINY_SEEDS)} tiny instances x "
                  f"60 partial assignments; failures {failures}")
    assert ok


# --- shared bundled-instance runs -------------------------------------------------------

@pytest.fixture(scope="module")
def bundled_runs():
    inst = bundled_instance()
    m = prepare_model(inst)
    t0 = time.process_time()
    initials, fixed = {}, {}
    for seed in SEEDS:
        initials[seed] = construct_initial(m, seed=seed)
        for L in (4, 7, 14):
            cfg = LnsConfig(strategy=Strategy.FIXED, window_len=L, max_iters=SWEEPS, seed=seed)
            fixed[seed, L] = run_lns(inst, cfg, initial=initials[seed], model=m)
    table4_seconds = time.process_time() - t0
    overlap = {}
    for seed in SEEDS:
        for L in (7, 15):
            cfg = LnsConfig(strategy=Strategy.OVERLAP, window_len=L, stride=7, max_iters=SWEEPS, seed=seed)
            overlap[seed, L] = run_lns(inst, cfg, initial=initials[seed], model=m)
    return inst, m, initials, fixed, table4_seconds, overlap


# --- 5. monotone improvement --------------------------------------------------------------

def test_05_monotone_improvement(report, bundled_runs):
    inst, m, initials, fixed, _, overlap = bundled_runs
    runs = list(fixed.values()) + list(overlap.values())
    for seed in SEEDS:
        runs.append(run_lns(inst, LnsConfig(strategy=Strategy.PROPAGATION, max_iters=2, seed=seed),
                            initial=initials[seed], model=m))
    bad = []
    moves = accepted = 0
    for k, res in enumerate(runs):
        if any(b > a for a, b in zip(res.trace, res.trace[1:])):
            bad.append((k, "trace", res.trace))
        for mv in res.moves:
            moves += 1
            if mv.outcome is Outcome.IMPROVED:
                accepted += 1
                if not mv.cost_after < mv.cost_before:
                    bad.append((k, "move", mv.cost_before, mv.cost_after))
            elif mv.cost_after != mv.cost_before:
                bad.append((k, "rejected move changed cost"))
        if roster_cost(inst, res.roster).total != res.cost:
            bad.append((k, "final roster cost"))
    ok = not bad
    report(5, ok, f"{len(runs)} seeded runs (fixed L=4/7/14, overlap L=7/15, propagation) over 10 seeds: "
                  f"traces non-increasing, {accepted} of {moves} moves accepted, all strictly improving; "
                  f"violations {bad}")
    assert ok


# --- 6. fixed-window trend ------------------------------------------------------------------

def test_06_fixed_window_trend(report, bundled_runs):
    inst, m, initials, fixed, seconds, _ = bundled_runs
    holds = []
    finals = []
    for seed in SEEDS:
        c4, c7, c14 = (fixed[seed, L].padded_trace(SWEEPS + 1)[-1] for L in (4, 7, 14))
        finals.append((c4, c7, c14))
        holds.append(c14 <= c7 <= c4)
    n = sum(holds)
    ok = n >= 7 and seconds < 300
    means = [format_mean(f[k] for f in finals) for k in range(3)]
    report(6, ok, f"final cost L=14 <= L=7 <= L=4 after {SWEEPS} sweeps in {n}/10 seeds (need 7), "
                  f"mean finals L4/L7/L14 = {'/'.join(means)}, {seconds:.0f} CPU s < 300 s")
    assert ok


# --- 7. overlapping windows --------------------------------------------------------------------

def sweeps_to_reach(trace, target):
    for k, c in enumerate(trace):
        if c <= target:
            return k
    return None


def dominates(fast, slow):
    """Every target reached by ``slow`` is reached by ``fast`` in no more sweeps."""
    for target in set(slow):
        a, b = sweeps_to_reach(fast, target), sweeps_to_reach(slow, target)
        if a is None or a > b:
            return False
    return True


def test_07_overlap_trend(report, bundled_runs):
    _, _, _, _, _, overlap = bundled_runs
    holds = [dominates(overlap[s, 15].padded_trace(SWEEPS + 1), overlap[s, 7].padded_trace(SWEEPS + 1))
             for s in SEEDS]
    n = sum(holds)
    ok = n >= 7
    report(7, ok, f"OVERLAP L=15 reaches every target cost of L=7 in no more sweeps in {n}/10 seeds (need 7)")
    assert ok


# --- 8. propagation-guided fragments ------------------------------------------------------------

def test_08_strategy3_structure(report, bundled_runs):
    inst, m, initials, _, _, _ = bundled_runs
    J = inst.horizon_days
    rng = random.Random(8)
    problems = []
    built = 0
    for k in range(100):
        incumbent = initials[k % 10]
        q = rng.randint(1, 3)
        s = rng.choice([1, 5, 21, 30, 60, 100])
        frag = fragment_propagation(m, incumbent, q, s, list_capacity=7, seed=rng.randrange(10 ** 6), iteration=k)
        built += 1
        if len(frag) != min(s, q * J):
            problems.append((k, "size", len(frag), min(s, q * J)))
        if any(step.list_len > 7 for step in frag.steps):
            problems.append((k, "list length"))
        linked = set()
        for step in frag.steps:
            if step.source != "random" and step.cell not in linked:
                problems.append((k, "unlinked", step.cell))
            for c in step.linked:
                v = c[0] * J + c[1]
                if not any(e.affected == v and e.size_after < e.size_before for e in step.events):
                    problems.append((k, "link without a reduction", c))
            linked |= set(step.linked)
        if m.depth != 0:
            problems.append((k, "model not restored"))
    ok = not problems and built == 100
    report(8, ok, f"{built} propagation fragments: size == min(s, q*J), list length <= 7, every list-delivered "
                  f"cell reduced by an earlier relaxation; problems {problems[:5]}")
    assert ok


# --- 9. heuristic harness ---------------------------------------------------------------------------

def _run_cli(capsys, *argv):
    code = main(list(argv))
    out, _ = capsys.readouterr()
    return code, out


def test_09_heuristics_harness(report, capsys):
    code, out = _run_cli(capsys, "bench", "--suite", "heuristics")
    rows = list(csv.DictReader(io.StringIO(out)))
    names = [r["heuristic"] for r in rows]
    positive = all(int(r["choice_points"]) > 0 and int(r["fails"]) > 0 for r in rows)
    costs = {int(r["cost"]) for r in rows}
    complete = all(r["complete"] == "1" for r in rows)
    cp = {r["heuristic"]: int(r["choice_points"]) for r in rows}
    ok = code == 0 and len(rows) == 6 and positive and len(costs) == 1 and complete
    order = "holds" if cp.get("MinSizeInt", 0) <= cp.get("MaxMaxInt", 0) else "does not hold"
    report(9, ok, f"bench --suite heuristics: {len(rows)} rows {names}, positive counts: {positive}, "
                  f"BEST_IMPROVED costs {sorted(costs)} (all searches exhausted: {complete}); "
                  f"ungated: MinSizeInt <= MaxMaxInt choice points {order} ({cp.get('MinSizeInt')} vs "
                  f"{cp.get('MaxMaxInt')})")
    assert ok


# --- 10. determinism ----------------------------------------------------------------------------------

def test_10_determinism(report, capsys, tmp_path):
    instance = str(bundled_instance_path())
    roster_file = tmp_path / "r.txt"
    roster_file.write_text("\n".join(["EEEELLLNNOOOOOOEEEELLLNNOOOO"] * 8) + "\n")
    commands = [
        ["solve", instance, "--strategy", "propagation", "--iters", "1", "--reps", "2"],
        ["solve", instance, "--strategy", "overlap", "--window", "11", "--iters", "1"],
        ["bench", "--suite", "heuristics"],
        ["bench", "--suite", "strategies", "--reps", "1", "--iters", "1"],
        ["cost", instance, str(roster_file)],
        ["validate", instance, str(roster_file)],
    ]
    differing = []
    for k, argv in enumerate(commands):
        outputs = []
        for rep in range(2):
            out_dir = tmp_path / f"c{k}_{rep}"
            extra = ["--out", str(out_dir)] if argv[0] in ("solve", "bench") else []
            code, out = _run_cli(capsys, *argv, *extra)
            files = sorted((p.name, p.read_bytes()) for p in out_dir.iterdir()) if extra else []
            outputs.append((code, out, files))
        if outputs[0] != outputs[1]:
            differing.append(" ".join(argv[:3]))
    ok = not differing
    report(10, ok, f"{len(commands)} commands run twice with identical flags produce byte-identical CSV "
                   f"output and files; differing: {differing}")
    assert ok
