#!/usr/bin/env python3
"""
boxrec command-line entry point.

Usage:
    python scripts/boxrec.py split --config config/settings.yaml
    python scripts/boxrec.py train --model.family box
    python scripts/boxrec.py eval --eval.regimes all
    python scripts/boxrec.py query u1 "a1 &! a2" --query.top-k 20
    python scripts/boxrec.py synth --config config/synthetic.yaml
    python scripts/boxrec.py sweep --sweep.n-runs 20

Exit codes: 0 success, 2 input error, 3 unknown id, 4 contract violation.
"""

import sys
from pathlib import Path

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from core.cli import main

if __name__ == "__main__":
    sys.exit(main())
