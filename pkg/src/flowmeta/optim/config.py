from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from ..errors import ConfigError
from ..evaluation.metrics import METRICS

DEFAULT_DATASET = ("a set of reasoning problems. Every problem is a question whose final answer "
                   "is checked automatically, so the workflow must state it clearly.")


@dataclass
class OptimizerConfig:
    """Knobs for the bi-level search.  Validated on construction."""

    n_outer: int = 3
    n_inner: int = 6
    epsilon: float = 0.02
    reflection_cases: int = 5
    optimizer_model: str = "optimizer"
    executor_model: str = "executor"
    optimizer_temperature: float = 0.5
    seed: int = 0
    metric: str = "solve_rate_math"
    external_command: str | None = None
    reflection: bool = True
    adapt: bool = True
    describe_sample: int = 5
    archive_top_k: int = 3
    feedback_cases: int = 3
    max_calls_per_task: int = 64
    max_wall_time: float = 600.0
    loop_cap: int = 4
    concurrency: int = 1
    dataset: str = DEFAULT_DATASET

    def __post_init__(self):
        if self.n_outer < 1:
            raise ConfigError("n_outer must be >= 1")
        if self.n_inner < 1:
            raise ConfigError("n_inner must be >= 1")
        if self.epsilon < 0:
            raise ConfigError("epsilon must be >= 0")
        if self.reflection_cases < 1 or self.feedback_cases < 0:
            raise ConfigError("case caps must be positive")
        if self.archive_top_k < 1 or self.describe_sample < 1:
            raise ConfigError("archive_top_k and describe_sample must be >= 1")
        if not 0.0 <= self.optimizer_temperature <= 2.0:
            raise ConfigError("optimizer_temperature must be in [0, 2]")
        if self.metric not in METRICS:
            raise ConfigError(f"unknown metric {self.metric!r}; expected one of {METRICS}")
        if self.concurrency < 1:
            raise ConfigError("concurrency must be >= 1")

    def budget_bound(self, m: int, n: int) -> int:
        """Upper bound on optimizer calls for m validation subtasks and n test clusters."""
        return self.n_outer * (m * self.n_inner + 2) + n

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, data: dict) -> "OptimizerConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"unknown optimizer settings: {', '.join(unknown)}")
        return cls(**data)
