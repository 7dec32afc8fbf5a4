"""Numerical laboratory for divergence-form diffusions.

Builds the process from its fundamental solution on a space-time grid,
decomposes time-dependent functionals along sampled paths, and verifies the
identities and estimates the construction is supposed to satisfy, by Monte
Carlo against grid quadrature oracles.
"""

from .calculus import (DecompositionParts, FunctionalSample, backward_integral,
                       alpha_principal_value, alpha_stieltjes,
                       covariation_check, doob_increments, extract_parts,
                       forward_integral, from_increments,
                       martingale_regression, pathwise_covariation,
                       quadratic_variation, star_integral, variation_ladder)
from .capacity import (CapacityEstimate, SpaceTimeSet, estimate_cap_family,
                       estimate_cap_L, exception_report)
from .functionals import (FukushimaParts, brownian_divergence_field,
                          caf_from_data, caf_integral, compose_functional,
                          energy_ladder, fukushima_decompose, hat_mollifier,
                          laplace_functional, martingale_component,
                          multiscale_divergence_field, quadratic_data,
                          revuz_check, riemann_functional,
                          rough_divergence_field, semimartingale_test,
                          sup_moment_check, tanaka_data)
from .harness import (REGISTRY, CompareError, ConfigError, ExperimentConfig,
                      RunContext, compare_reports, run_config)
from .io import (load_ensemble, load_grid_arrays, load_kernel, save_ensemble,
                 save_grid_arrays, save_kernel, write_csv)
from .model import (CoefficientField, Partition, SpaceTimeGrid, Weight,
                    default_norm_box, dyadic_partitions, validate_ellipticity,
                    weighted_norm)
from .pde import (DistributionData, TransitionKernel, WeakSolution,
                  check_apriori, check_aronson, check_chapman,
                  fundamental_solution, resolvent, resolvent_via_kernel,
                  solve_cauchy)
from .reports import BoundReport, CheckResult, LadderReport
from .sampling import (KernelChain, PathEnsemble, moment_check,
                       occupation_check, sample_paths, weighted_start_battery)

__version__ = "0.1.0"

__all__ = [
    "BoundReport", "CapacityEstimate", "CheckResult", "CoefficientField",
    "CompareError", "ConfigError", "DecompositionParts", "DistributionData",
    "ExperimentConfig", "FukushimaParts", "FunctionalSample", "KernelChain",
    "LadderReport", "Partition", "PathEnsemble", "REGISTRY", "RunContext",
    "SpaceTimeGrid", "SpaceTimeSet", "TransitionKernel", "WeakSolution",
    "Weight", "alpha_principal_value", "alpha_stieltjes", "backward_integral",
    "brownian_divergence_field", "caf_from_data", "caf_integral",
    "check_apriori", "check_aronson", "check_chapman", "compare_reports",
    "compose_functional", "covariation_check", "default_norm_box",
    "doob_increments", "dyadic_partitions", "energy_ladder", "estimate_cap_L",
    "estimate_cap_family", "exception_report", "extract_parts",
    "forward_integral", "from_increments", "fukushima_decompose",
    "fundamental_solution",
    "hat_mollifier", "laplace_functional", "load_ensemble",
    "load_grid_arrays", "load_kernel", "martingale_component",
    "martingale_regression", "moment_check", "multiscale_divergence_field",
    "occupation_check", "pathwise_covariation", "quadratic_data",
    "quadratic_variation", "resolvent", "resolvent_via_kernel", "revuz_check",
    "riemann_functional", "rough_divergence_field", "run_config",
    "sample_paths", "save_ensemble", "save_grid_arrays", "save_kernel",
    "semimartingale_test", "solve_cauchy", "star_integral",
    "sup_moment_check", "tanaka_data", "validate_ellipticity",
    "variation_ladder", "weighted_norm", "weighted_start_battery",
    "write_csv",
]
