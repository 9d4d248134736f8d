"""Weighted norm, the boundary barrier and the boundary-growth condition."""
import numpy as np

from fracpucci import (Field, build_grid, build_phi, hopf_condition_check, l1s_norm,
                       make_kernel, negpart_bound_constant, psi_r)
from fracpucci.experiments import negative_shell_exterior

line = build_grid(1, "interval", 1.0, 1 / 256, 10.0)

# norm of the indicator of (-1, 1) with s = 1/2 is pi/2
one = Field(line, np.ones(line.n_nodes))
print("indicator norm", l1s_norm(one, 0.5), "exact", np.pi / 2)

# negative exterior shells contribute in closed form
neg = Field(line, np.zeros(line.n_nodes), negative_shell_exterior(1.0)).negative_part()
print("norm of the negative part of a shell", l1s_norm(neg, 0.5))

# barrier that vanishes outside B1 and grows like d^s at the boundary
kernel = make_kernel(1, 0.5, 1.0, 2.0)
phi, report = build_phi(kernel)
print("barrier parameters", {k: round(float(v), 6) for k, v in report.parameters.items()})
for ln in report.lines:
    print(f"  {ln.name:22s} asserted={ln.asserted!s:5s} min slack {ln.min_slack:+.3e} "
          f"failures {len(ln.failures)}")

# rescaled copy inside a larger interval, with its lower-bound line
big = build_grid(1, "interval", 2.0, 1 / 128, 10.0)
psi, rep = psi_r(phi, [0.5], r=0.5, alpha_r=0.3, grid=big, c_barrier=report.parameters["c"])
print("psi at centre", psi.values[big.node_index([0.5])], "min slack",
      rep.line("boundary_growth").min_slack)

# the sufficient condition for boundary growth
C = negpart_bound_constant(d0=0.5, s=0.5, dim=1, Lambda=2.0)
print("C_tilde", C, hopf_condition_check(C, norm_uminus=0.01, alpha_r=0.5, r=0.25, s=0.5,
                                         c_barrier=0.1))
