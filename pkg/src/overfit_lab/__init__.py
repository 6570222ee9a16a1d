"""Expected in-sample / out-of-sample Sharpe ratios for linear predictive strategies."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConvergenceError,
    NumericalError,
    OverfitLabError,
    SingularMatrixError,
    ValidationError,
)
from .model import (  # noqa: E402
    BacktestWindow,
    DerivedMatrices,
    ModelSpec,
    ValidationReport,
    WeightRule,
    derive_matrices,
    validate_model,
)
