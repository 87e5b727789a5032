"""Time series reasoning with operator programs: a small plan language over
statistical and forecasting operators, an execution loop with structured
feedback, a synthetic benchmark and its evaluator."""

from .core import BinVec, Frame, IntVec, OutputContract, Quality, TaskInstance, TaskKind, TimeSeries
from .dsl import Plan, parse_plan, serialize_plan, validate_plan
from .executor import EpisodeTrace, execute_plan, run_episode
from .registry import default_registry

__version__ = "0.1.0"

__all__ = [
    "BinVec",
    "EpisodeTrace",
    "Frame",
    "IntVec",
    "OutputContract",
    "Plan",
    "Quality",
    "TaskInstance",
    "TaskKind",
    "TimeSeries",
    "default_registry",
    "execute_plan",
    "parse_plan",
    "run_episode",
    "serialize_plan",
    "validate_plan",
]
