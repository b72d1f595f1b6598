"""Estimation and simulation of doubly stochastic Poisson arrival processes."""

__version__ = "0.1.0"

from .core import Horizon, RngStream  # noqa: E402
from .dswgan import DSWGAN, DSWGANModel, TrainingConfig, sample, train  # noqa: E402

__all__ = ["DSWGAN", "DSWGANModel", "Horizon", "RngStream", "TrainingConfig", "sample", "train",
           "__version__"]
