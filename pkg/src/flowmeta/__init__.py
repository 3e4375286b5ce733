"""Bi-level search over agentic workflows, with test-time adaptation."""

from .errors import FlowMetaError
from .estimator import AdaptFlow
from .optim import OptimizerConfig, continuation_signal, run_meta_optimization, run_test_phase, test_time_adapt
from .store import ArchiveEntry, RunStore
from .tasks import TaskInstance, load_corpus, split_corpus
from .workflow import WorkflowProgram, parse_program, render_program, seed_program

__version__ = "0.1.0"

__all__ = [
    "AdaptFlow", "ArchiveEntry", "FlowMetaError", "OptimizerConfig", "RunStore", "TaskInstance",
    "WorkflowProgram", "continuation_signal", "load_corpus", "parse_program", "render_program",
    "run_meta_optimization", "run_test_phase", "seed_program", "split_corpus", "test_time_adapt",
]
