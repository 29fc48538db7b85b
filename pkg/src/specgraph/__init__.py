"""Multi-frequency partial correlation graphs from multivariate time series."""

from .tensor_core import (
    CSDTensor,
    FrequencyPartition,
    InverseCSDTensor,
    NumericalError,
    SpecGraphError,
    TimeSeriesPanel,
    ValidationError,
)

__version__ = "0.1.0"

__all__ = [
    "CSDTensor",
    "FrequencyPartition",
    "InverseCSDTensor",
    "NumericalError",
    "SpecGraphError",
    "TimeSeriesPanel",
    "ValidationError",
]
