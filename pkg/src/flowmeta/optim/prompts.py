"""Prompt templates for the optimizer model and the code that fills them.

Templates live in ``flowmeta/data/prompts`` and use bracketed placeholders
such as ``[ARCHIVE]``.  Filling is a single regex pass, so placeholder-like
text inside a filled value is never substituted a second time.
"""

from __future__ import annotations

import json
import re
from functools import lru_cache
from importlib import resources

from ..evaluation.evaluator import Score, render_case, textual_loss_report
from ..store import ArchiveEntry

PLACEHOLDERS = ("ARCHIVE", "ARCHIVE_LIST", "EXAMPLE", "CASE_LIST", "TASK_DSC",
                "DATASET", "PROGRESS", "AGENT", "DSL_GUIDE")
_PLACEHOLDER_RE = re.compile(r"\[(" + "|".join(PLACEHOLDERS) + r")\]")

SYSTEM_PROMPT = "You are a helpful assistant. Reply in well-formed JSON."
PROPOSAL_FIELDS = ("thought", "name", "code")
REFLECTION_FIELDS = ("reflection", "thought", "name", "code")


@lru_cache(maxsize=None)
def load_template(name: str) -> str:
    return resources.files("flowmeta.data.prompts").joinpath(name).read_text(encoding="utf-8")


def example_block() -> str:
    return json.dumps(json.loads(load_template("example.json")), indent=2, ensure_ascii=False)


def fill(template: str, values: dict[str, str]) -> str:
    """Replace every ``[KEY]`` for which ``values`` has an entry; others stay as written."""
    return _PLACEHOLDER_RE.sub(lambda m: values.get(m.group(1), m.group(0)), template)


def _common(dataset: str) -> dict[str, str]:
    return {"DATASET": dataset, "EXAMPLE": example_block(), "DSL_GUIDE": load_template("dsl_guide.txt").rstrip()}


def render_entry(entry: ArchiveEntry, subtask: str | None = None) -> str:
    """One archive entry as shown to the optimizer: name, fitness, thought and code."""
    if subtask is not None:
        fit = f"{entry.fitness.get(subtask, 0.0):.4f}"
    else:
        fit = ", ".join(f"{k} {v:.4f}" for k, v in sorted(entry.fitness.items())) or "not evaluated"
    lines = [f"## {entry.name} (fitness: {fit})"]
    if not entry.ok:
        lines.append(f"This proposal was rejected and scored 0: {entry.error}")
    if entry.thought:
        lines.append(f"thought: {entry.thought}")
    lines.append("```\n" + entry.code.rstrip() + "\n```")
    return "\n".join(lines)


def feedback_block(entry: ArchiveEntry, subtask: str, cases: int, seed) -> str:
    """Textual loss of ``entry`` on ``subtask``, rebuilt from the stored score."""
    data = entry.scores.get(subtask)
    if data is None:
        return ""
    return textual_loss_report(Score.from_json(data), sample_cap=cases, seed=seed)


def inner_prompt(entries, current: ArchiveEntry, subtask: str, progress: str, dataset: str,
                 feedback_cases: int = 3, seed=0) -> str:
    blocks = [render_entry(e, subtask) for e in entries]
    feedback = feedback_block(current, subtask, feedback_cases, seed)
    archive = "\n\n".join(blocks)
    if feedback:
        archive += f"\n\n## Evaluation of {current.name}, the workflow you are revising\n{feedback.rstrip()}"
    return fill(load_template("inner.txt"), {**_common(dataset), "ARCHIVE": archive, "PROGRESS": progress})


def archive_section(subtask: str, label: str | None, entries) -> str:
    title = f"### Subtask {subtask}" + (f" ({label})" if label else "")
    return title + "\n\n" + "\n\n".join(render_entry(e, subtask) for e in entries)


def outer_prompt(sections, progress: str, dataset: str) -> str:
    return fill(load_template("outer.txt"),
                {**_common(dataset), "ARCHIVE_LIST": "\n\n".join(sections), "PROGRESS": progress})


def reflection_prompt(cases) -> str:
    case_list = "\n\n".join(render_case(c, i) for i, c in enumerate(cases, start=1))
    return fill(load_template("reflection.txt"), {"CASE_LIST": case_list})


def adapt_prompt(description: str, code: str, dataset: str) -> str:
    return fill(load_template("adapt.txt"),
                {**_common(dataset), "TASK_DSC": description.strip(), "AGENT": "```\n" + code.rstrip() + "\n```"})


def proposal_json(entry: ArchiveEntry) -> str:
    """The assistant turn that stands for ``entry`` when asking for a reflection."""
    return json.dumps({"thought": entry.thought, "name": entry.name, "code": entry.code},
                      indent=2, ensure_ascii=False)
