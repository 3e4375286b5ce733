from __future__ import annotations

from .ir import AgentCall, AgentSpec, Extract, Ref, Return, WorkflowProgram

# one level of nested braces, so \boxed{\frac{1}{2}} is captured whole
BOXED_PATTERN = r"\\boxed\{((?:[^{}]|\{[^{}]*\})*)\}"

SEED_INSTRUCTION = (
    "Please think step by step and then solve the task. "
    "Present the final answer using the \\boxed{} format."
)


def seed_program() -> WorkflowProgram:
    """The initial workflow: one step-by-step solver and a boxed-answer extractor."""
    solver = AgentSpec(name="solver", role="careful problem solver", temperature=0.5,
                       output_fields=("answer",))
    return WorkflowProgram(
        name="Seed-CoT",
        thought="Chain-of-thought baseline: reason step by step, then extract the boxed answer.",
        nodes=(
            AgentCall(id="cot", agent=solver, inputs=(Ref("task"),), instruction=SEED_INSTRUCTION),
            Extract(id="final", source=Ref("cot", "answer"), patterns=(BOXED_PATTERN,), fallback=True),
            Return(ref=Ref("final", "answer")),
        ),
    )
