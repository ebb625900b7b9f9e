"""Simulator for local, post-local and hierarchical SGD."""

from .data import Dataset, load_libsvm, parse_libsvm
from .kernels import BACKEND
from .objectives import LogisticL2, MLP, Quadratic, make_objective
from .optim import HSchedule, LrSchedule, local_steps_at, lr_at
from .simulator import CostModel, Trace, simulate, time_to_target
from .sync import SyncPlan

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "CostModel", "Dataset", "HSchedule", "LogisticL2", "LrSchedule", "MLP", "Quadratic",
    "SyncPlan", "Trace", "load_libsvm", "local_steps_at", "lr_at", "make_objective", "parse_libsvm",
    "simulate", "time_to_target",
]
