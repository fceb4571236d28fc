#!/usr/bin/env python3
"""Time the efficient vs naive execution paths from the repository checkout.

Equivalent to `fdy bench ...`.

    python3 scripts/run_bench.py --preset default --repeats 20
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from fdyconv.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main(["bench", *sys.argv[1:]]))
