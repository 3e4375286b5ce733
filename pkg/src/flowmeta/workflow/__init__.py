from .dsl import parse_unchecked, render_program, tokenize
from .interpreter import execute_program
from .ir import (
    AgentCall,
    AgentSpec,
    ExecutionLimits,
    ExecutionTrace,
    Extract,
    Fanout,
    InfoRecord,
    Ref,
    Return,
    Select,
    TraceStep,
    VerifyLoop,
    Vote,
    WorkflowProgram,
)
from .seed import BOXED_PATTERN, seed_program
from .validate import Violation, check_program, parse_program, validate_program

__all__ = [
    "AgentCall", "AgentSpec", "BOXED_PATTERN", "ExecutionLimits", "ExecutionTrace", "Extract",
    "Fanout", "InfoRecord", "Ref", "Return", "Select", "TraceStep", "VerifyLoop", "Violation",
    "Vote", "WorkflowProgram", "check_program", "execute_program", "parse_program",
    "parse_unchecked", "render_program", "seed_program", "tokenize", "validate_program",
]
