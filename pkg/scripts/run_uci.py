#!/usr/bin/env python3
"""Run the CSV benchmark protocol over local dataset copies.

Expects <name>.csv files (see treeuq.bench.UCI_TABLE for names and the
required row counts) under --data-dir, defaulting to ./data.  All flags of
`treeuq bench uci` are accepted and forwarded.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from treeuq.cli import main  # noqa: E402

if __name__ == "__main__":
    argv = sys.argv[1:]
    if "--data-dir" not in argv:
        argv = ["--data-dir", "data", *argv]
    sys.exit(main(["bench", "uci", *argv]))
