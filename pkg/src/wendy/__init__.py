"""Weak-form estimation of ODE parameters with errors-in-variables IRLS."""

__version__ = "0.1.0"

from .core import (Dataset, EstimationResult, Feature, FeatureLibrary, TimeGrid,  # noqa: E402
                   WendyError)
from .estimator import WENDyRegressor, fit_weak  # noqa: E402
from .irls import IRLSOptions, confidence_intervals, ols_solve  # noqa: E402
from .models import add_noise, catalog, parse_library, subsample, truth  # noqa: E402
from .testfn import TestFunctionOptions, build_orthonormal_basis, select_min_radius  # noqa: E402
from .weakform import assemble  # noqa: E402

__all__ = [
    "Dataset", "EstimationResult", "Feature", "FeatureLibrary", "TimeGrid", "WendyError",
    "WENDyRegressor", "fit_weak", "IRLSOptions", "confidence_intervals", "ols_solve",
    "add_noise", "catalog", "parse_library", "subsample", "truth", "TestFunctionOptions",
    "build_orthonormal_basis", "select_min_radius", "assemble",
]
