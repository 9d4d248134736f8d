"""Raising a negative exterior shell until the solution touches zero."""
import numpy as np

from fracpucci import Problem, build_grid, growth_exponent_fit, make_kernel, smp_check, threshold_search
from fracpucci.experiments import example_exterior, solve_descending

grid = build_grid(1, "interval", 1.0, 1 / 256, 10.0)
# exterior: 0 on B2\B1, 1 - M on B3\B2, 1 beyond; a = 1, q = s = 1/2
for lam, big_lam in ((1.0, 2.0), (1.0, 1.0)):
    kernel = make_kernel(1, 0.5, lam, big_lam)
    out = threshold_search(grid, kernel, 1.0, 0.5, 0.0, 10.0, tol_zero=1e-3)
    print(f"\nclass [{lam}, {big_lam}]: M* = {out.m_star:.6f}, min u = {out.min_u_star:.2e}")
    for M, m in out.ladder:
        print(f"  M = {M:9.6f}  min u = {m:+.4e}")

    past = Problem(grid, kernel, "minus", 1.0, 0.5, example_exterior(out.m_star + 0.1))
    u, _ = solve_descending(past)
    smp = smp_check(u, 1e-5, 0.5)
    print(f"  at M* + 0.1: {smp.dead_core.size} nodes with u <= tol, sup u = {u.values.max():+.4f}")
    if u.values.max() > 0:
        for point, expo, n in growth_exponent_fit(u, smp.dead_core):
            print(f"  growth exponent at x = {point[0]:+.4f}: {expo:.3f} ({n} samples)")
    else:
        print("  solution is negative everywhere: no positive region to fit")
