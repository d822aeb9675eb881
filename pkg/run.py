"""
run.py
------
Launcher for the kmr command line.

Usage:
    python run.py <command> [flags]
    python run.py --help
"""

import os
import sys

# ── Paths ────────────────────────────────────────────────────────────────────
ROOT = os.path.dirname(os.path.abspath(__file__))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from kmr.cli import run  # noqa: E402

if __name__ == "__main__":
    sys.exit(run(sys.argv[1:]))
