"""Average treatment effect estimation with high-dimensional confounders."""

from hdate.errors import (
    ConfigError,
    DegeneratePropensityError,
    FoldInfeasibleError,
    HdateError,
    MleNonexistenceError,
    NumericalError,
)
from hdate.simcore import (
    Dataset,
    SimulationConfig,
    TrueParams,
    load_dataset,
    simulate,
    true_ate,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "Dataset",
    "DegeneratePropensityError",
    "FoldInfeasibleError",
    "HdateError",
    "MleNonexistenceError",
    "NumericalError",
    "SimulationConfig",
    "TrueParams",
    "load_dataset",
    "simulate",
    "true_ate",
]
