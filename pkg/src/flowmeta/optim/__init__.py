from ..store import ArchiveEntry
from .config import OptimizerConfig
from .engine import (
    Counters,
    MetaOptimizer,
    OptimizerState,
    TextualGradient,
    continuation_signal,
    run_meta_optimization,
    run_test_phase,
    test_time_adapt,
)

__all__ = [
    "ArchiveEntry", "Counters", "MetaOptimizer", "OptimizerConfig", "OptimizerState", "TextualGradient",
    "continuation_signal", "run_meta_optimization", "run_test_phase", "test_time_adapt",
]
