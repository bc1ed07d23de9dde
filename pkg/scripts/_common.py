"""Shared helper: run one ``bench`` suite and keep its CSV files under results/."""

import sys
import time
from pathlib import Path

from rosterlns.cli import main

RESULTS = Path(__file__).resolve().parent.parent / "results"


def run_suite(suite: str, extra: list[str]) -> int:
    out = RESULTS / suite
    t0 = time.perf_counter()
    code = main(["bench", "--suite", suite, "--out", str(out), *extra])
    print(f"# {suite}: exit {code}, {time.perf_counter() - t0:.1f} s wall, files in {out}", file=sys.stderr)
    return code
