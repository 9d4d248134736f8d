"""Principal eigenpair and a nontrivial solution trapped between barriers."""
import numpy as np

from fracpucci import (ExteriorSpec, Problem, build_grid, existence_sandwich, make_kernel,
                       principal_eigenpair, smp_check)

kernel = make_kernel(1, s=0.5, lam=1.0, big_lam=1.0)
grid = build_grid(1, "interval", 1.0, 1 / 256, 10.0)

eig = principal_eigenpair(grid, kernel)
print(f"lambda1 = {eig.lambda1:.5f}  residual {eig.residual:.1e}  "
      f"{eig.iterations} inverse iterations")

# halving the interval multiplies the eigenvalue by 2^(2s)
half = principal_eigenpair(grid.scaled(0.5), kernel)
print("scaling ratio", half.lambda1 / eig.lambda1)

# M^-[u] + u^(1/2) = 0 in (-1, 1), u = 0 outside
problem = Problem(grid, kernel, "minus", 1.0, 0.5, ExteriorSpec())
res = existence_sandwich(problem)
c = res.certificate
print(f"eps = {c['epsilon']:.4f}, k = {c['k']:.3f}, residual {c['residual']:.1e}, "
      f"{c['steps']} steps, holds = {c['holds']}")
print("margins: lower", c["min_lower_margin"], "upper", c["min_upper_margin"])
print("verdict", smp_check(res.u, 1e-5, 0.5).verdict, "max u", res.u.values.max())
