"""Regenerate the golden approximation-error table.

The table is what `asgsr analyze-filter` emits with default arguments:
windows linspace(0.5, 4.0, 36), sigma_g = 0.5, epsilon = 0.1. The true
response comes from adaptive quadrature (abs tol 1e-10), so regenerated
values are stable far below the 1e-9 comparison tolerance used in tests.

Run from the repository root:  python3 tests/data/regenerate_golden.py
"""

import pathlib

import numpy as np

from asgsr.filters import FilterConfig, approx_error_curve, write_error_curve_csv

HERE = pathlib.Path(__file__).parent

rows = approx_error_curve(np.linspace(0.5, 4.0, 36), 0.5, FilterConfig(epsilon=0.1))
out = HERE / "error_curve_golden.csv"
write_error_curve_csv(rows, out)
print(f"wrote {out} ({len(rows)} rows)")
