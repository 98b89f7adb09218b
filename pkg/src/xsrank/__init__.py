"""Cross-sectional stock ranking on decomposed temporal components."""

from .backtest import StrategyConfig, portfolio_metrics, run_backtest
from .data import (
    PanelDataset,
    PredictionSeries,
    SynthConfig,
    generate_synthetic,
    load_factors,
    load_panel,
    standardize_features,
)
from .errors import ConfigError, DataError, NonFiniteError, XsrankError
from .evaluate import subgroup_metrics, summarize
from .factor_reg import ff_regression, newey_west_se, ols
from .graphs import build_relation_graphs
from .model import ActConfig, ActModel, load_checkpoint, save_checkpoint
from .training import TrainSettings, predict_sliding, train

__version__ = "0.1.0"

__all__ = [
    "ActConfig",
    "ActModel",
    "ConfigError",
    "DataError",
    "NonFiniteError",
    "PanelDataset",
    "PredictionSeries",
    "StrategyConfig",
    "SynthConfig",
    "TrainSettings",
    "XsrankError",
    "build_relation_graphs",
    "ff_regression",
    "generate_synthetic",
    "load_checkpoint",
    "load_factors",
    "load_panel",
    "newey_west_se",
    "ols",
    "portfolio_metrics",
    "predict_sliding",
    "run_backtest",
    "save_checkpoint",
    "standardize_features",
    "subgroup_metrics",
    "summarize",
    "train",
]
