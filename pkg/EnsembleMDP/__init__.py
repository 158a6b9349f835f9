from .core import (
    CostSchedule,
    EnsembleState,
    PenaltySchedule,
    PenaltyVariant,
    Problem,
    Solution,
    StochasticMatrix,
)
from .general_solver import LambdaMethod, LambdaSolveConfig
from .solvers import solve
from .tracker import TrackerConfig, TrackingProblem, TrackingResult, track

__version__ = '0.1.0'

__all__ = [
    "CostSchedule",
    "EnsembleState",
    "LambdaMethod",
    "LambdaSolveConfig",
    "PenaltySchedule",
    "PenaltyVariant",
    "Problem",
    "Solution",
    "StochasticMatrix",
    "TrackerConfig",
    "TrackingProblem",
    "TrackingResult",
    "solve",
    "track",
]
