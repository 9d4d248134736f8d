"""Extremal operators on a grid: evaluation, policies and a closed-form check."""
import numpy as np

from fracpucci import (PLUS, MINUS, Field, build_grid, fractional_laplacian_kernel,
                       make_kernel, optimal_policy)
from fracpucci.experiments import example_exterior
from fracpucci.operators import PolicyField, linear_apply, operator_apply

grid = build_grid(2, "disk", 1.0, 1 / 16, 4.0)      # unit disk, h = 1/16
kernel = make_kernel(2, s=0.5, lam=1.0, big_lam=2.0, n_dirs=16)
print(grid, kernel.n_dirs, "directions")

# a smooth field with piecewise-constant data outside the disk
ext = example_exterior(2.0)                          # 0 on B2\B1, -1 on B3\B2, 1 beyond
u = Field.from_function(grid, lambda x: np.cos(2 * x[:, 0]) * (1 - (x ** 2).sum(1)), ext)

plus, minus = operator_apply(u, PLUS, kernel), operator_apply(u, MINUS, kernel)
print("M+ range", plus.min(), plus.max())
print("M- range", minus.min(), minus.max())

# any admissible kernel weight sits between the two extremal values
rng = np.random.default_rng(0)
mu = PolicyField(rng.uniform(1.0, 2.0, (grid.n_nodes, kernel.n_dirs)), kernel)
L = linear_apply(u, mu, kernel)
print("bracketed:", bool(np.all((minus <= L + 1e-12) & (L <= plus + 1e-12))))

# the optimal policy attains the extremum
best = linear_apply(u, optimal_policy(u, PLUS, kernel), kernel)
print("policy error:", np.max(np.abs(best - plus)))

# with the fractional-Laplacian normalisation, (1 - x^2)_+^s has constant image
line = build_grid(1, "interval", 1.0, 1 / 512, 10.0)
for s in (0.25, 0.5, 0.75):
    bump = Field.from_function(line, lambda x: np.maximum(1 - x[:, 0] ** 2, 0) ** s)
    v = operator_apply(bump, PLUS, fractional_laplacian_kernel(1, s))
    inner = v[np.abs(line.nodes[:, 0]) <= 0.9]
    print(f"s={s}: mean {inner.mean():.4f}, relative spread {np.ptp(inner) / abs(inner.mean()):.2%}")
