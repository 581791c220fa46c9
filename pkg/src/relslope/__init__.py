"""Pivotal self-normalized inference for slope functions in functional
linear regression under time-series dependence.

The package estimates the slope in scalar-on-function and
function-on-function linear models by penalized regression in an
empirically diagonalizing eigenbasis, and tests relevant hypotheses of
the form "squared L^2 norm <= Delta" (one-sample, location, two-sample)
using a self-normalized statistic whose limiting quantiles are simulated
from Brownian paths.  No long-run variances or other nuisance parameters
are estimated anywhere.
"""

__version__ = "0.1.0"

from .errors import ContractError, NumericalError
from .funcspace import (
    Grid,
    Curve,
    Curve2D,
    BasisSet,
    inner_l2,
    inner_l2_2d,
    empirical_covariance,
    fourier_project,
)
from .eigensys import (
    EigenSystem,
    TensorEigenSystem,
    solve_eigen_scalar,
    solve_eigen_functional,
    gram_l2,
)
from .estimator import (
    FractionScheme,
    SequentialFit,
    SequentialFitFunctional,
    build_design_scalar,
    build_design_functional,
    ridge_path_scalar,
    ridge_path_functional,
    gcv_select_scalar,
    gcv_select_functional,
    evaluate_estimate,
    evaluate_estimate_functional,
    fit_scalar,
    fit_functional,
)
from .pivotal import PivotalConfig, QuantileTable, draw_pivotal, quantiles, cached_quantile
from .inference import (
    TestStatistics,
    TestReport,
    stats_one_sample_scalar,
    stats_location,
    stats_two_sample,
    stats_functional,
    decide,
    confidence_intervals,
    largest_rejected_delta,
)

__all__ = [name for name in dir() if not name.startswith("_")]
