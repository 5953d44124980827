"""CuDvine: univariate D-vine time-series copulas linked by a cross-sectional copula."""
from ._backend import available, current, set_backend
from .copulae import BivariateCopulaSpec, Family
from .crosscopula import CrossCopulaSpec, CrossKind
from .errors import ConfigError, ConvergenceError, CuDvineError, DataError, DomainError
from .estimation import FitConfig, FitReport, fit_cudvine, select_udvine
from .forecast_scoring import ForecastEnsemble, backtest, forecast_one_step
from .marginals import EmpiricalMarginal
from .model import CuDvineModel, TimeSeriesPanel
from .udvine import UDvineModel, UDvineSpec

__version__ = "0.1.0"

__all__ = [
    "BivariateCopulaSpec", "ConfigError", "ConvergenceError", "CrossCopulaSpec", "CrossKind",
    "CuDvineError", "CuDvineModel", "DataError", "DomainError", "EmpiricalMarginal", "Family",
    "FitConfig", "FitReport", "ForecastEnsemble", "TimeSeriesPanel", "UDvineModel", "UDvineSpec",
    "available", "backtest", "current", "fit_cudvine", "forecast_one_step", "select_udvine",
    "set_backend",
]
