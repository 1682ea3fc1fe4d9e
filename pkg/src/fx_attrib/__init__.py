"""Attribute daily FX moves to COVID-19 policies with an LSTM -> random forest -> TreeSHAP pipeline."""

from .errors import DataError, FxAttribError, StageError
from .forest import Forest, ForestConfig, fit_forest, predict
from .pipeline import PipelineConfig, run
from .treeshap import Attribution, brute_force_shapley, explain_forest, normalize_attribution

__version__ = "0.1.0"

__all__ = [
    "Attribution", "DataError", "Forest", "ForestConfig", "FxAttribError", "PipelineConfig",
    "StageError", "brute_force_shapley", "explain_forest", "fit_forest", "normalize_attribution",
    "predict", "run",
]
