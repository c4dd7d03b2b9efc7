"""Recompute the synthetic instance's brute-force optimum from the closed-form 2x2 oracle.

Usage: python3 scripts/synthetic_reference.py
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from tests.oracles import synthetic_theta_star  # noqa: E402

if __name__ == "__main__":
    theta, f = synthetic_theta_star()
    print(f"theta* = {theta!r}, f*(theta*) = {f!r} (10^4-point grid on [-1, 1])")
