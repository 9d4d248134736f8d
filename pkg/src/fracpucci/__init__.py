"""Numerical lab for fractional Pucci extremal operators with sublinear sources.

Discretises ``M^+/-[u] + a(x) (u^+)^q = 0`` on intervals, disks and boxes with
exterior data, and provides barrier constructions, monotone solvers and the
scenario checks used to probe positivity, dead cores and boundary growth.
"""
from .domain import DomainGrid, ExteriorSpec, Field, Shell, build_grid, eval_anywhere
from .operators import (MINUS, PLUS, KernelSpec, OperatorError, directional_integral,
                        eval_extremal, eval_linear, fractional_laplacian_constant,
                        fractional_laplacian_kernel, get_operator, make_kernel,
                        optimal_policy)
from .barriers import (BarrierReport, build_phi, hopf_condition_check, l1s_norm,
                       negpart_bound_constant, psi_r, rho1, rho2)
from .solvers import (EigenPair, Instability, NonConvergence, PolicyCycle, Problem,
                      SandwichResult, SandwichViolation, SolverConfig, existence_sandwich,
                      policy_iteration_solve, principal_eigenpair, pseudo_time_solve, residual)
from .experiments import (DEAD_CORE, STRICTLY_POSITIVE, TRIVIAL, ScenarioResult,
                          exterior_tail_check, growth_exponent_fit, max_localization_check,
                          norm_sweep, smp_check, threshold_search, weight_bound_check)
from .config import ConfigError, Scenario, load_config, parse_config
from .runner import run_scenario

__version__ = "0.1.0"
