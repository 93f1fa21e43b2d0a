"""rakekit: dimension-agnostic raking of tabular estimates to aggregates.

Build a problem from tabular records (`parse_table` + `build_problem`),
solve it (`solve`), and propagate input uncertainty to the raked values
(`delta_covariance`, `monte_carlo_covariance`). The `rakekit` command-line
tool wraps the same pipeline for CSV inputs.
"""

from . import errors
from .linop import AggOperator, WorkCounter, hvp, hvp_2d_reshape, margins_2d, stack
from .losses import Chi2Loss, EntropicLoss, Loss, LogisticLoss, make_loss
from .solver import (
    Solution,
    SolverOptions,
    solve,
    solve_1d_entropic,
    solve_chi2_closed_form,
    solve_ipf_2d,
    solve_missing,
    solve_newton_dual,
)
from .table import (
    DimSpec,
    Problem,
    RakingData,
    RakingRow,
    build_problem,
    parse_table,
    prune_constraints,
)
from .uq import (
    CovarianceResult,
    InputCovariance,
    chi2_closed_form_covariance,
    delta_covariance,
    monte_carlo_covariance,
    sensitivity_query,
)

__version__ = "0.1.0"

__all__ = [
    "AggOperator", "WorkCounter", "hvp", "hvp_2d_reshape", "margins_2d", "stack",
    "Loss", "Chi2Loss", "EntropicLoss", "LogisticLoss", "make_loss",
    "DimSpec", "RakingData", "RakingRow", "Problem",
    "parse_table", "build_problem", "prune_constraints",
    "SolverOptions", "Solution", "solve", "solve_1d_entropic",
    "solve_chi2_closed_form", "solve_ipf_2d", "solve_newton_dual", "solve_missing",
    "InputCovariance", "CovarianceResult", "delta_covariance",
    "chi2_closed_form_covariance", "monte_carlo_covariance", "sensitivity_query",
    "errors",
]
