"""Spatio-temporal graph-convolutional traffic speed forecasting with
maintenance-workzone feature fusion."""

from .features import (ConstructionEvent, FeatureMap, NormalizationParams,
                       WindowedDataset)
from .graph import RoadGraph, SpectralOperators, build_graph
from .model import GcnRwzModel, ModelConfig, init_model

__version__ = "0.1.0"

__all__ = [
    "ConstructionEvent",
    "FeatureMap",
    "GcnRwzModel",
    "ModelConfig",
    "NormalizationParams",
    "RoadGraph",
    "SpectralOperators",
    "WindowedDataset",
    "build_graph",
    "init_model",
    "__version__",
]
