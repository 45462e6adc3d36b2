"""Interaction-pursuit biconvex optimization for sparse multivariate regression.

Graphical-lasso estimates of the response (and predictor) precision matrices
become signed Laplacian smoothing penalties in an l1-penalized coefficient
solve. The package also carries comparison estimators, a simulation lab and a
rolling-window index-tracking pipeline.
"""

from .core import (Dataset, PenaltyConfig, CoefficientFit, standardize, soft_threshold,
                   unstandardize_coefficients, predict)
from .errors import (
    IPBOError, ShapeMismatch, DimensionMismatch, ZeroVarianceColumn,
    NotConverged, NonPSDInput, NonPositiveDiagonal, TargetUnreachable,
    DimensionTooSmall, DimensionGuard, ParseError, EmptyPanel, InsufficientData,
    MissingLabels, WindowMisalignment, ConstantSeries)
from .glasso import PrecisionEstimate, fit_glasso, cv_select_lambda, sample_covariance
from .laplacian import LaplacianMatrix, build_laplacian, quadratic_form, laplacian_gradient
from .solver import (Mode, SolveOptions, fit_b, two_stage, iterative_refine, bic_tune,
                     sparsity_target_tune, fit_tuned, CountMode)
from . import baselines, simlab, tracking

__version__ = "0.1.0"
