import pytest

from oracles import TINY_SEEDS, tiny_case, tiny_instance_text
from rosterlns.cli import format_mean, main, mean_trace_csv

FEASIBLE = [s for s in TINY_SEEDS if tiny_case(s)[1].optimum is not None]
INFEASIBLE = [s for s in TINY_SEEDS if tiny_case(s)[1].optimum is None]

WEEK = """\
HORIZON 7 MON
SHIFT D DAY Day
CONTRACT FULL total=3 weekly=4..5 series=1..7
NURSE a FULL
WEIGHTS single_night=0 stand_alone=0 weekend_one=0 single_off=0 weekly_unit=100 series_unit=0 weekly_exp=1
DEMAND 0 D=1
DEMAND 1 D=1
DEMAND 2 D=1
"""


@pytest.fixture
def files(tmp_path):
    def write(name, text):
        p = tmp_path / name
        p.write_text(text)
        return str(p)
    return write


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_cost_reproduces_the_linear_weekly_example(capsys, files):
    code, out, _ = run(capsys, "cost", files("w.rst", WEEK), files("r.txt", "DDDOOOO\n"))
    assert code == 0
    assert out.splitlines()[-1] == "TOTAL,,100"
    assert "WEEKLY_COUNT,0,100" in out.splitlines()


def test_cost_of_an_empty_roster(capsys, files):
    inst = WEEK.replace("total=3 weekly=4..5", "total=0 weekly=0..0").replace("D=1", "D=0")
    code, out, err = run(capsys, "cost", files("w.rst", inst), files("r.txt", "OOOOOOO\n"))
    assert code == 0 and out.splitlines()[-1] == "TOTAL,,0" and err == ""


def test_cost_warns_about_hard_violations(capsys, files):
    code, out, err = run(capsys, "cost", files("w.rst", WEEK), files("r.txt", "DDDDOOO\n"))
    assert code == 0
    assert "TOTAL_SHIFTS" in err and out.startswith("constraint_id,nurse,cost\n")


def test_validate(capsys, files):
    inst = files("w.rst", WEEK)
    code, out, _ = run(capsys, "validate", inst, files("ok.txt", "DDDOOOO\n"))
    assert code == 0 and out == "constraint_id,nurse,first_day,last_day,detail\n"
    code, out, _ = run(capsys, "validate", inst, files("bad.txt", "DDDDOOO\n"))
    assert code == 1
    lines = out.splitlines()
    assert lines[1] == "COVERAGE,-1,3,3,D has 1 needs 0"
    assert lines[2] == "TOTAL_SHIFTS,0,0,6,\"4 shifts, needs 3\""


def test_input_errors_exit_2(capsys, files, tmp_path):
    missing = str(tmp_path / "nope.rst")
    code, _, err = run(capsys, "solve", missing)
    assert code == 2 and missing in err
    code, _, err = run(capsys, "solve", files("bad.rst", "HORIZON 7 XYZ\n"))
    assert code == 2 and "SYNTAX" in err and "line 1" in err
    code, _, _ = run(capsys, "cost", files("w.rst", WEEK), files("r.txt", "DDXOOOO\n"))
    assert code == 2


def test_dimension_mismatch_exits_5(capsys, files):
    code, _, err = run(capsys, "cost", files("w.rst", WEEK), files("r.txt", "DDDOOO\n"))
    assert code == 5 and "1x6" in err
    code, _, _ = run(capsys, "validate", files("w.rst", WEEK), files("r.txt", "DDDOOOO\nOOOOOOO\n"))
    assert code == 5


@pytest.mark.parametrize("argv", [
    ["solve", "--window", "0"],
    ["solve", "--strategy", "zigzag"],
    ["solve", "--no-such-flag"],
    ["solve", "--rows", "99"],
    ["solve", "--reps", "0"],
    ["bench", "--suite", "nothing"],
    ["bench"],
    [],
])
def test_bad_flags_exit_4(capsys, files, argv):
    if argv and argv[0] == "solve":
        argv = argv[:1] + [files("t.rst", tiny_instance_text(FEASIBLE[0]))] + argv[1:]
    code, out, err = run(capsys, *argv)
    assert code == 4 and out == "" and err.startswith("error:")


def test_infeasible_exits_3(capsys, files):
    code, out, err = run(capsys, "solve", files("t.rst", tiny_instance_text(INFEASIBLE[0])), "--window", "3")
    assert code == 3 and "infeasible" in err and out == ""


def test_solve_writes_traces(capsys, files, tmp_path):
    inst = files("t.rst", tiny_instance_text(FEASIBLE[1]))
    out_dir = tmp_path / "out"
    code, out, _ = run(capsys, "solve", inst, "--window", "3", "--iters", "4", "--reps", "2",
                       "--out", str(out_dir))
    assert code == 0
    assert out == (out_dir / "mean_trace.csv").read_text()
    run0 = (out_dir / "run_seed0.csv").read_text().splitlines()
    assert run0[0] == "iter,cost,choice_points,fails"
    assert len(run0) == 1 + 5
    assert (out_dir / "run_seed1.csv").exists()
    roster = (out_dir / "best_roster.txt").read_text().split()
    assert len(roster) == tiny_case(FEASIBLE[1])[0].n_nurses
    code, out, _ = run(capsys, "solve", inst, "--window", "3", "--iters", "0")
    assert code == 0 and len(out.splitlines()) == 2


def test_solve_is_byte_identical_across_runs(capsys, files, tmp_path):
    inst = files("t.rst", tiny_instance_text(FEASIBLE[2]))
    texts = []
    for k in range(2):
        d = tmp_path / f"o{k}"
        code, out, _ = run(capsys, "solve", inst, "--strategy", "propagation", "--rows", "2", "--size", "4",
                           "--reps", "3", "--out", str(d))
        assert code == 0
        texts.append((out, sorted((p.name, p.read_bytes()) for p in d.iterdir())))
    assert texts[0] == texts[1]


def test_timing_columns_are_opt_in(capsys, files, tmp_path):
    inst = files("t.rst", tiny_instance_text(FEASIBLE[1]))
    run(capsys, "solve", inst, "--window", "3", "--timing", "--out", str(tmp_path / "t"))
    assert (tmp_path / "t" / "run_seed0.csv").read_text().startswith("iter,cost,choice_points,fails,cpu_seconds\n")


def test_diagnostics_stay_on_stderr(capsys, files, monkeypatch):
    import logging
    monkeypatch.setenv("ROSTER_LNS_LOG", "trace")
    logger = logging.getLogger("rosterlns")
    try:
        code, out, err = run(capsys, "solve", files("t.rst", tiny_instance_text(FEASIBLE[1])), "--window", "3")
        assert code == 0
        assert out.startswith("iter,mean_cost\n")
        assert "seed 0: trace" in err
    finally:
        for h in list(logger.handlers):
            logger.removeHandler(h)
        logger.setLevel(logging.NOTSET)


@pytest.mark.parametrize("values, text", [
    ([1, 2], "1.50"), ([1, 0, 0, 0, 0, 0, 0, 0], "0.12"), ([3, 0, 0, 0, 0, 0, 0, 0], "0.38"),
    ([49], "49.00"), ([2, 2, 3], "2.33"), ([0, 0, 1], "0.33"), ([5, 0, 0, 0, 0, 0, 0, 0], "0.62"),
])
def test_mean_formatting(values, text):
    assert format_mean(values) == text


def test_mean_trace_csv():
    assert mean_trace_csv([[10, 8], [11, 7]]) == "iter,mean_cost\n0,10.50\n1,7.50\n"
