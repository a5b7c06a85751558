"""Occupation-time, local-time and moment monitors on Y = W."""
from __future__ import annotations

import math

from qbsde.generators import GeneratorSpec
from qbsde.grid import TimeGrid, sample_brownian
from qbsde.monitors import builtin_psis, estimate_local_time, ito_p_residual, krylov_check, lp_moment_report
from qbsde.pure import brownian_terminal
from qbsde.solver import solve_bsde

spec = GeneratorSpec()
sol = solve_bsde(spec, brownian_terminal(lambda x: x, "linear"), sample_brownian(TimeGrid.uniform(1.0, 400), 10_000))
for psi in builtin_psis():
    r = krylov_check(sol, spec, psi, 1.0)
    print(f"{psi.name:<16} lhs {r.lhs:.4f} <= rhs {r.rhs:.4f}  (ratio {r.tightness:.1f})")
L = estimate_local_time(sol, 0.0, 0.05).mean()
print(f"E[L^0_1] ~ {L:.4f}, sqrt(2/pi) = {math.sqrt(2 / math.pi):.4f}")
print("Ito residual medians:", {p: f"{ito_p_residual(sol, p).median_abs:.2e}" for p in (1.5, 2.0, 3.0)})
r = lp_moment_report(sol, spec, 2.0)
print(f"E sup|Y|^2 = {r.ystar_p:.3f} (Doob bound 4), E int|Z|^2 = {r.z_p:.3f}")
