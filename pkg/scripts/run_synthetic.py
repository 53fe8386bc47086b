#!/usr/bin/env python3
"""Run the synthetic benchmark protocol.

Desk scale by default (10 restarts x (500+500), 200 trees, 5 folds);
pass --paper-scale for the full 50 x (2000+2000) protocol.  All flags of
`treeuq bench synthetic` are accepted and forwarded.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from treeuq.cli import main  # noqa: E402

if __name__ == "__main__":
    sys.exit(main(["bench", "synthetic", *sys.argv[1:]]))
