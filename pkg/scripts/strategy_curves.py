"""Mean cost per sweep for fixed, overlapping and propagation-guided fragments.

Produces the long-format curve table (strategy, param, iter, mean_cost) plus
one per-run CSV per strategy and seed.  Extra arguments go to
``rosterlns bench`` (e.g. ``--reps 3``).

    python3 scripts/strategy_curves.py
"""

import sys

from _common import run_suite

if __name__ == "__main__":
    sys.exit(run_suite("strategies", sys.argv[1:]))
