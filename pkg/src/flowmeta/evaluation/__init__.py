from .evaluator import (
    FailureCase,
    Score,
    TaskOutcome,
    evaluate_workflow,
    render_case,
    sample_failures,
    textual_loss_report,
)
from .metrics import (
    METRICS,
    ExternalCommand,
    make_scorer,
    metric_f1,
    metric_math_equal,
    metric_pass_at_1_external,
    normalize_answer,
)

__all__ = [
    "METRICS", "ExternalCommand", "FailureCase", "Score", "TaskOutcome", "evaluate_workflow",
    "make_scorer", "metric_f1", "metric_math_equal", "metric_pass_at_1_external", "normalize_answer",
    "render_case", "sample_failures", "textual_loss_report",
]
