"""Desk-scale CT reconstruction with SQS, circulant and downsampled majorizers.

Usage: python scripts/run_ct_demo.py [OUT_DIR]
"""

import sys

from majdesign.cli import main

if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else "out/ct"
    sys.exit(main(["ct-demo", "--out", out]))
