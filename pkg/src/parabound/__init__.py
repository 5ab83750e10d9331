"""Heat-kernel Duhamel operators and pointwise bounds for semilinear parabolic problems."""

from .bounds import BoundSet, chi_field, thm31_bound, thm32_bound, thm33_window, window_constant
from .duhamel import DivergenceError, R, S, S_field, h_field, propagate_field
from .expr import parse_expression
from .fields import Field, FnSpec
from .grid import Domain, Grid, build_grid, exhaust, laplacian_apply
from .harness import (BoundReport, EpsModel, ZSpec, comparison_oracle, eps_model,
                      refined_growth_check, verify_bounds, z_check)
from .kernel import Kernel, mass, semigroup_residual
from .phi import PhiFamily, lemma41_residual, phi, phi_derivatives, phi_inv
from .scenario import Scenario, run_scenario
from .solver import (SolverOptions, monotone_iteration, residual, solve_linear,
                     solve_semilinear, sub_super_pair)

__version__ = "0.1.0"
