import pytest
from hypothesis import given, settings, strategies as st

from oracles import TINY_SEEDS, tiny_case
from rosterlns import bundled_instance, roster_cost, row_costs, validate_roster
from rosterlns.instance import Roster
from rosterlns.lns import (
    Fragment,
    LnsConfig,
    RunResult,
    Strategy,
    Termination,
    fragment_fixed,
    fragment_overlap,
    fragment_propagation,
    fragments_per_sweep,
    prepare_model,
    run_lns,
)
from rosterlns.search import Outcome, SearchStats, construct_initial

FEASIBLE = [s for s in TINY_SEEDS if tiny_case(s)[1].optimum is not None]


def days_of(frag: Fragment) -> list[int]:
    return sorted({d for _, d in frag.cells})


@pytest.fixture(scope="module")
def bundled():
    inst = bundled_instance()
    m = prepare_model(inst)
    return inst, m, construct_initial(m, seed=0)


# --- window arithmetic ---------------------------------------------------------

def test_fixed_window_examples():
    inst = bundled_instance()
    assert days_of(fragment_fixed(0, inst, 7)) == list(range(0, 7))
    assert days_of(fragment_fixed(3, inst, 7)) == list(range(21, 28))
    assert days_of(fragment_fixed(4, inst, 7)) == list(range(0, 7))  # next sweep
    whole = fragment_fixed(5, inst, 28)
    assert len(whole) == 8 * 28
    f = fragment_fixed(1, inst, 7)
    assert {i for i, _ in f.cells} == set(range(8)) and f.strategy is Strategy.FIXED and f.iteration == 1


def test_overlap_window_examples():
    inst = bundled_instance()
    assert days_of(fragment_overlap(1, inst, 11, 7)) == list(range(7, 18))
    first = set(days_of(fragment_overlap(0, inst, 11, 7)))
    assert first & set(range(7, 18)) == {7, 8, 9, 10}
    assert days_of(fragment_overlap(2, inst, 15, 7)) == list(range(14, 28))
    assert days_of(fragment_overlap(3, inst, 15, 7)) == list(range(0, 15))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 28), st.integers(0, 40))
def test_overlap_with_stride_equal_to_length_is_fixed(L, k):
    inst = bundled_instance()
    assert fragment_overlap(k, inst, L, L).cells == fragment_fixed(k, inst, L).cells


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 28), st.integers(1, 28))
def test_each_sweep_covers_the_horizon(L, stride):
    inst = bundled_instance()
    stride = min(stride, L)
    for strategy, make in ((Strategy.FIXED, lambda k: fragment_fixed(k, inst, L)),
                           (Strategy.OVERLAP, lambda k: fragment_overlap(k, inst, L, stride))):
        n = fragments_per_sweep(inst, LnsConfig(strategy=strategy, window_len=L, stride=stride))
        covered = set()
        for k in range(n):
            covered |= make(k).cells
        assert len(covered) == inst.n_nurses * inst.horizon_days


def test_window_arguments_are_checked():
    inst = bundled_instance()
    with pytest.raises(ValueError):
        fragment_fixed(0, inst, 29)
    with pytest.raises(ValueError):
        fragment_overlap(0, inst, 7, 8)


def test_config_validation():
    inst = bundled_instance()
    for bad in (dict(window_len=0), dict(strategy=Strategy.OVERLAP, window_len=7, stride=8),
                dict(rows=0), dict(rows=9), dict(size=0), dict(list_capacity=0), dict(max_iters=-1),
                dict(nodes_per_cell=-1)):
        with pytest.raises(ValueError):
            LnsConfig(**bad).validate(inst)
    LnsConfig().validate(inst)


def test_budget_grows_with_the_fragment():
    cfg = LnsConfig(node_limit=200, nodes_per_cell=3.5)
    assert cfg.budget(21).max_nodes == 200
    assert cfg.budget(56).max_nodes == 200
    assert cfg.budget(120).max_nodes == 420
    assert LnsConfig(node_limit=None).budget(120).max_nodes is None
    assert LnsConfig(nodes_per_cell=0).budget(224).max_nodes == 200


# --- propagation-guided fragments ----------------------------------------------

def check_structure(frag: Fragment, inst, incumbent, q, s, capacity):
    J = inst.horizon_days
    assert len(frag) == min(s, q * J)
    ranked = row_costs(inst, incumbent)
    assert frag.rows == tuple(sorted(i for i, _ in ranked[:q]))
    assert all(i in frag.rows for i, _ in frag.cells)
    assert all(step.list_len <= capacity for step in frag.steps)
    assert [st_.cell for st_ in frag.steps] and {st_.cell for st_ in frag.steps} == set(frag.cells)
    linked_so_far: set = set()
    for step in frag.steps:
        if step.source == "list":
            # delivered by the list: an earlier step's propagation reduced this cell
            assert step.cell in linked_so_far
        else:
            assert step.source == "random"
        for c in step.linked:
            assert any(e.affected == c[0] * J + c[1] and e.size_after < e.size_before for e in step.events)
        linked_so_far |= set(step.linked)


@pytest.mark.parametrize("q, s, cap", [(2, 21, 7), (1, 5, 3), (3, 60, 7), (2, 100, 7), (8, 1, 7), (2, 30, 1)])
def test_propagation_fragment_structure(bundled, q, s, cap):
    inst, m, init = bundled
    m.reset()
    before = m.snapshot()
    for k in range(3):
        frag = fragment_propagation(m, init, q, s, cap, seed=k, iteration=k)
        check_structure(frag, inst, init, q, s, cap)
        assert m.snapshot() == before and m.depth == 0


def test_single_cell_fragment_is_random(bundled):
    inst, m, init = bundled
    frag = fragment_propagation(m, init, 2, 1, seed=4)
    assert len(frag) == 1 and frag.steps[0].source == "random"


def test_propagation_fragment_is_seeded(bundled):
    inst, m, init = bundled
    a = fragment_propagation(m, init, 2, 21, seed=9)
    b = fragment_propagation(m, init, 2, 21, seed=9)
    assert a.cells == b.cells and [s.cell for s in a.steps] == [s.cell for s in b.steps]


def test_expensive_rows_are_chosen():
    inst, enum = tiny_case(FEASIBLE[0])
    for cells, _ in enum.rosters[:5]:
        r = Roster(cells)
        m = prepare_model(inst)
        frag = fragment_propagation(m, r, 1, 3)
        top = row_costs(inst, r)[0][0]
        assert frag.rows == (top,)


# --- the improvement loop --------------------------------------------------------

def test_zero_iterations(bundled):
    inst, m, init = bundled
    res = run_lns(inst, LnsConfig(max_iters=0), initial=init, model=m)
    assert res.trace == [roster_cost(inst, init).total]
    assert res.roster == init and res.termination is Termination.MAX_ITERS


def _check_run(inst, res: RunResult):
    assert all(a >= b for a, b in zip(res.trace, res.trace[1:]))
    for mv in res.moves:
        if mv.outcome is Outcome.IMPROVED:
            assert mv.cost_after < mv.cost_before
        else:
            assert mv.cost_after == mv.cost_before
    assert roster_cost(inst, res.roster).total == res.cost
    assert validate_roster(inst, res.roster) == []


@pytest.mark.parametrize("seed", FEASIBLE)
@pytest.mark.parametrize("cfg", [
    LnsConfig(strategy=Strategy.FIXED, window_len=2, max_iters=3),
    LnsConfig(strategy=Strategy.OVERLAP, window_len=3, stride=2, max_iters=3),
    LnsConfig(strategy=Strategy.PROPAGATION, rows=2, size=5, max_iters=3),
], ids=["fixed", "overlap", "propagation"])
def test_tiny_runs_are_monotone(seed, cfg):
    inst, enum = tiny_case(seed)
    cfg.seed = seed
    res = run_lns(inst, cfg)
    _check_run(inst, res)
    assert res.cost >= enum.optimum


@pytest.mark.parametrize("seed", FEASIBLE)
def test_optimal_incumbent_stagnates(seed):
    inst, enum = tiny_case(seed)
    best = min(enum.rosters, key=lambda rc: rc[1])
    res = run_lns(inst, LnsConfig(window_len=7, max_iters=3, node_limit=None), initial=Roster(best[0]))
    if enum.optimum == 0:
        assert res.termination is Termination.ZERO_COST and res.trace == [0]
    else:
        assert res.trace == [enum.optimum, enum.optimum]
        assert res.termination is Termination.STAGNATION
        assert all(mv.outcome is Outcome.NO_IMPROVEMENT for mv in res.moves)


@pytest.mark.parametrize("seed", FEASIBLE)
def test_whole_grid_window_reaches_the_optimum(seed):
    inst, enum = tiny_case(seed)
    res = run_lns(inst, LnsConfig(window_len=7, max_iters=2, node_limit=None))
    assert res.cost == enum.optimum


def test_bundled_run_is_reproducible(bundled):
    inst, m, init = bundled
    cfg = LnsConfig(strategy=Strategy.PROPAGATION, max_iters=1, seed=3)
    a = run_lns(inst, cfg, initial=init, model=m)
    b = run_lns(inst, cfg, initial=init, model=m)
    _check_run(inst, a)
    assert a.to_csv(timing=False) == b.to_csv(timing=False)
    assert a.roster == b.roster
    # the model is handed back at the root
    assert m.depth == 0 and not any(m.frozen)


def test_run_csv_and_padding():
    res = RunResult([50, 40, 40], [SearchStats(), SearchStats(3, 2, 0.5), SearchStats(1, 1, 0.25)],
                    Roster(("O",)), Roster(("O",)), Termination.STAGNATION)
    assert res.padded_trace(5) == [50, 40, 40, 40, 40]
    assert res.to_csv(timing=False, rows=4).splitlines() == [
        "iter,cost,choice_points,fails", "0,50,0,0", "1,40,3,2", "2,40,1,1", "3,40,0,0"]
    assert res.to_csv().splitlines()[1:3] == ["0,50,0,0,0.000", "1,40,3,2,0.500"]
