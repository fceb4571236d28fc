#!/usr/bin/env python3
"""Run the randomized property suites from the repository checkout.

Equivalent to `fdy verify ...`; handy when iterating without reinstalling.

    python3 scripts/run_verify.py --trials 100 --seed 42
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from fdyconv.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main(["verify", *sys.argv[1:]]))
