"""Mean cost per sweep of non-overlapping windows of 4, 7 and 14 days.

Ten seeds by default; every seed builds its own initial roster, shared by the
three window lengths.  Extra arguments go to ``rosterlns bench``
(e.g. ``--reps 3 --iters 2`` for a quick look).

    python3 scripts/fixed_window_table.py
"""

import sys

from _common import run_suite

if __name__ == "__main__":
    sys.exit(run_suite("fixed-window", sys.argv[1:]))
