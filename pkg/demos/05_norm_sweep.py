"""Positivity as the negative exterior data grows."""
import numpy as np

from fracpucci import build_grid, make_kernel, norm_sweep

grid = build_grid(1, "interval", 1.0, 1 / 128, 10.0)
kernel = make_kernel(1, 0.5, 1.0, 2.0)
amplitudes = np.round(np.arange(0.0, 0.2001, 0.005), 6)

for a0 in (0.5, 1.0, 2.0):
    sweep = norm_sweep(grid, kernel, a0, 0.5, amplitudes)
    print(f"a = {a0}: onset amplitude {sweep.onset}, last positive norm {sweep.onset_norm:.4g}, "
          f"{sweep.transitions} transition(s)")

for row in sweep.rows:
    print(f"  amplitude {row.amplitude:.3f}  |u-| = {row.l1s_neg:.4f}  {row.verdict:17s} "
          f"min u = {row.min_u:+.3e}  min u/d^s = {row.hopf_min:+.3e}")
