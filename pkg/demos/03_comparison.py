"""Random ordered pairs of equations: the larger data must give the larger solution."""
from __future__ import annotations

from qbsde.experiments import comparison_batch
from qbsde.grid import TimeGrid, sample_brownian
from qbsde.regression import BasisSpec

paths = sample_brownian(TimeGrid.uniform(1.0, 10), 2000, seed=3)
batch = comparison_batch(12, paths, seed=3, basis=BasisSpec(family="spline"), trim=0.005)
for o in batch.outcomes:
    print(f"{o.index:>3} {o.kind:<5} min(Y'-Y) {o.min_difference:+.4f}  tol {o.tolerance:.4f}  "
          f"{'ok' if o.passed else 'VIOLATION'}  {o.description}")
print(f"{batch.n_pass}/{len(batch.outcomes)} ordered")
