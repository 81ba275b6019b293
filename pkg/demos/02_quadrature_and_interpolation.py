"""Gaussian expectations by Gauss-Hermite rules and grid interpolation orders."""

import numpy as np

from fbsde_multistep import (
    ActiveWindow,
    GridSpec,
    expect_gaussian,
    grid_points,
    hermite_rule,
    interpolate_values,
)

print("E[cos(B)] for standard normal B; exact value exp(-1/2)\n")
exact = np.exp(-0.5)
for L in (2, 4, 6, 8):
    rule = hermite_rule(L)
    approx = expect_gaussian(lambda v: np.cos(v[0]), 1, rule)
    print(f"  L = {L}:  {approx:.15f}   error {abs(approx - exact):.2e}")

print("\ntensor rule, E[cos(B1) * B2^2] = exp(-1/2):")
rule = hermite_rule(8)
approx = expect_gaussian(lambda v: np.cos(v[0]) * v[1] ** 2, 2, rule)
print(f"  L = 8:  {approx:.15f}   error {abs(approx - exact):.2e}")

print("\ninterpolation of sin on an h-grid, degree r, max error on [-1, 1]:")
for r in (2, 4, 6):
    errs = []
    for h in (0.1, 0.05):
        spec = GridSpec(q=1, h=h, origin=[0.0])
        window = ActiveWindow(lo=[int(-3 / h)], hi=[int(3 / h)])
        values = np.sin(grid_points(spec, window)[:, 0]).reshape(window.extents)
        probes = np.linspace(-1, 1, 401)[:, None]
        out = interpolate_values(values, window, spec, probes, r=r)
        errs.append(np.max(np.abs(out - np.sin(probes[:, 0]))))
    order = np.log2(errs[0] / errs[1])
    print(f"  r = {r}: err(h=0.1) = {errs[0]:.2e}  err(h=0.05) = {errs[1]:.2e}"
          f"  observed order = {order:.2f}")
