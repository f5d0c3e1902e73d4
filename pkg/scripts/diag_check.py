"""Design a diagonal majorizer for diag(1..8) from three seeds and report the error.

Usage: python scripts/diag_check.py
"""

import numpy as np

from majdesign import DesignProblem, HermitianOperator, IdentityOperator, design

if __name__ == "__main__":
    h = np.arange(1.0, 9.0)
    p = DesignProblem(HermitianOperator.from_dense(np.diag(h)), IdentityOperator(8))
    for seed in range(3):
        res = design(p, iters=500, seed=seed, cert_mode="none")
        print(f"seed {seed}: max|d - h| = {np.abs(res.d - h).max():.2e} ({res.stop_reason})")
