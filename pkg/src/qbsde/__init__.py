"""Monte Carlo and finite-difference solvers for quadratic BSDEs with integrable coefficients."""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import (CoefficientEvaluationError, ConfigError, IllConditionedBasisError, InvalidComparisonError,
                     OracleFailureError, PreconditionError, QbsdeError, SimulationBlowupError, StepDivergenceError,
                     TerminalOverflowError)
from .grid import PathBundle, SdeModel, TimeGrid, brownian_model, euler_maruyama, ou_model, sample_brownian
from .transforms import (IntegrableCoefficient, TransformTable, build_u, build_v, gaussian, indicator, invert_u,
                         piecewise_constant, zero)
from .pure import (BsdeSolution, TerminalCondition, brownian_terminal, compare_pure, constant_terminal,
                   solve_pure_exact, solve_pure_mc)
from .generators import GeneratorSpec, combine, generator_from_config, linear, quadratic
from .solver import (SolverConfig, comparison_run, double_approximation_run, solve_bsde, stability_run)
from .monitors import (OccupationReport, builtin_psis, estimate_local_time, ito_p_residual, krylov_check,
                       lp_moment_report, null_set_occupation)
from .pde import PdeGrid, feynman_kac_compare, growth_check, solve_pde

import types as _types

__all__ = [name for name, obj in globals().items()
           if not name.startswith("_") and name != "annotations" and not isinstance(obj, _types.ModuleType)]
