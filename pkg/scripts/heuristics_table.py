"""Choice points and fails of the six variable-selection heuristics.

Relaxes the first week of the bundled instance around the seed-0 initial
roster and proves the week optimal with each heuristic.  Extra arguments are
passed to ``rosterlns bench`` (e.g. ``--timing``, ``--nodes 5000``).

    python3 scripts/heuristics_table.py
"""

import sys

from _common import run_suite

if __name__ == "__main__":
    sys.exit(run_suite("heuristics", sys.argv[1:]))
