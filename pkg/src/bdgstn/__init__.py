"""Backbone-based dynamic graph spatio-temporal epidemic forecasting on a
small numpy autograd engine."""

from .data import EpidemicDataset, load_dataset, save_dataset
from .estimator import BDGSTNForecaster, PersistenceBaseline, SIRBaseline
from .metrics import evaluate
from .simulator import SimConfig, simulate
from .training import TrainConfig, evaluate_split, train

__version__ = "0.1.0"

__all__ = [
    "BDGSTNForecaster", "EpidemicDataset", "PersistenceBaseline", "SIRBaseline", "SimConfig",
    "TrainConfig", "evaluate", "evaluate_split", "load_dataset", "save_dataset", "simulate", "train",
]
