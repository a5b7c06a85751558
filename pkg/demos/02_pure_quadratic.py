"""Solve Y_t = W_1 + int_t^1 f(Y)|Z|^2 ds - int_t^1 Z dW by Monte Carlo and by quadrature."""
from __future__ import annotations

import numpy as np

from qbsde.grid import TimeGrid, sample_brownian
from qbsde.pure import brownian_terminal, solve_pure_exact, solve_pure_mc
from qbsde.transforms import indicator

f = indicator(0.5, 1.0)
xi = brownian_terminal(lambda x: x, "linear")
paths = sample_brownian(TimeGrid.uniform(1.0, 50), 20_000, seed=7)
mc = solve_pure_mc(f, xi, paths)
exact = solve_pure_exact(f, xi, np.array([0.0, 1.0]), [0.0]).Y[0, 0]
print(f"Monte Carlo Y0 = {mc.y0:.5f} +- {mc.se_y0:.5f}   quadrature Y0 = {exact:.10f}")
for t, x in ((0.5, 0.3), (0.5, 1.5), (0.75, -1.2)):
    s = solve_pure_exact(f, xi, np.array([t, 1.0]), [x])
    print(f"  y({t}, {x:+.1f}) = {s.Y[0, 0]:.8f}")
