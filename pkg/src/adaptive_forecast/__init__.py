"""Adaptive dual-channel forecasting with a calibrated meta-selector."""

from .channels import Channel, ChannelPrediction
from .config import ConfigError, RunConfig
from .evaluate import EvalReport, ablate, prepare, sensitivity_sweep, walk_forward
from .ingest import DataError, TimeFrame

__version__ = "0.1.0"

__all__ = [
    "Channel",
    "ChannelPrediction",
    "ConfigError",
    "DataError",
    "EvalReport",
    "RunConfig",
    "TimeFrame",
    "ablate",
    "prepare",
    "sensitivity_sweep",
    "walk_forward",
]
