"""Nonlocal model of the Poisson equation on manifolds with Dirichlet boundary.

Kernels, chart geometry, quadrature clouds, the six model operators, the
coupled solve, truncation-residual studies and the built-in manifold cases.
"""

from .catalog import CASE_IDS, ManifoldCase, ManufacturedSolution, fd_laplace_oracle, get_case
from .geometry import (conormal, grad_M, kappa_n, laplace_beltrami, metric_at,
                       normal_identity_residual, xi_eta)
from .kernels import COSINE, KernelProfile, ScaledKernel, eval_profile, eval_scaled, validate_profile
from .operators import MODES, NonlocalOperators, OperatorBlocks, assemble_system
from .residuals import (RateFit, ResidualReport, rate_fit, region_split_norms, residual_boundary,
                        residual_interior, residual_report, residual_reports, solution_error,
                        weak_pairing, weighted_average)
from .sampling import QuadratureCloud, integrate_boundary, integrate_interior, sample_case
from .solve import SingularSystemError, SolutionPair, solve_coupled

__version__ = "0.1.0"

__all__ = [
    "CASE_IDS", "COSINE", "MODES",
    "KernelProfile", "ManifoldCase", "ManufacturedSolution", "NonlocalOperators",
    "OperatorBlocks", "QuadratureCloud", "RateFit", "ResidualReport", "ScaledKernel",
    "SingularSystemError", "SolutionPair",
    "assemble_system", "conormal", "eval_profile", "eval_scaled", "fd_laplace_oracle",
    "get_case", "grad_M", "integrate_boundary", "integrate_interior", "kappa_n",
    "laplace_beltrami", "metric_at", "normal_identity_residual", "rate_fit",
    "region_split_norms", "residual_boundary", "residual_interior", "residual_report",
    "residual_reports", "sample_case", "solution_error", "solve_coupled",
    "validate_profile", "weak_pairing", "weighted_average", "xi_eta",
]
