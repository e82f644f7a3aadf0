"""Falsification of temporal-logic requirements by output space exploration."""

from .signal import InputSignal, Signal, resample, to_signal
from .stl import parse, robustness
from .models import get_model
from .explore import ExploreParams, TraceLibrary, run_explorer
from .optimize import Objective, OptResult, run_optimizer

__version__ = "0.1.0"

__all__ = [
    "InputSignal", "Signal", "resample", "to_signal", "parse", "robustness",
    "get_model", "ExploreParams", "TraceLibrary", "run_explorer",
    "Objective", "OptResult", "run_optimizer", "__version__",
]
