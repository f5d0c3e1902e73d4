"""Weighted-Toeplitz MM comparison at the default size; prints the summary table.

Usage: python scripts/run_toeplitz.py [OUT_DIR]
"""

import sys

from majdesign.cli import main

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "out/toeplitz"
    sys.exit(main(["toeplitz", "--out", out]))
