"""A small scripted world for end-to-end runs.

Tasks are multiplication word problems in three topics with disjoint
vocabulary.  Each task has a hidden difficulty ``d`` in 0..5.  A proposed
workflow carries a ``<lvl:L>`` tag in its instruction and the scripted
executor answers a task correctly iff ``d <= L``; the seed workflow counts
as level 0.  Optimizer replies are keyed on the progress line of each
prompt, so every rule is a pure function of the prompt.
"""

from __future__ import annotations

import json
import random
import re

from flowmeta.tasks import TaskInstance
from flowmeta.workflow.seed import BOXED_PATTERN, SEED_INSTRUCTION

EXEC_SENTINEL = "Given the above, follow this instruction:"
SEED_LEVEL_TEXT = SEED_INSTRUCTION.split(".")[0]
TAIL_PATTERN = r"(-?\d+)\s*$"

TOPICS = {
    "orchard": ("orchard", "farmer", "baskets", "apples", "ladder"),
    "railway": ("railway", "conductor", "carriages", "passengers", "platform"),
    "harbor": ("harbor", "sailor", "crates", "lanterns", "pier"),
}

# (topic, outer, step) -> level; unlisted steps propose a level that solves nothing
INNER_SCHEDULE = {
    ("orchard", 1, 1): -1, ("orchard", 1, 2): "invalid", ("orchard", 1, 3): 2,
    ("railway", 1, 1): 3,
    ("orchard", 2, 1): 4,
    ("railway", 2, 1): -1, ("railway", 2, 2): 3,
    ("harbor", 2, 1): 1, ("harbor", 2, 2): 4,
    ("orchard", 3, 1): 5,
    ("railway", 3, 1): 5,
    ("harbor", 3, 3): 5,
}
# outer -> list of levels for attempts 1 and 2
MERGE_SCHEDULE = {1: [2], 2: ["invalid", 4], 3: [4]}
REFLECT_SCHEDULE = {1: 3, 3: 5}


def _question(topic: str, a: int, b: int, c: int) -> str:
    place, person, group, item, spot = TOPICS[topic]
    return (f"At the {place}, the {person} lines up {a} {group} by the {spot}. "
            f"Each of the {group} holds {b} bundles, and every bundle has {c} {item}. "
            f"How many {item} are there in all?")


def make_tasks(per_topic: int = 20, seed: int = 0, prefix: str = "t", plain: int = 0,
               avoid=()) -> list[TaskInstance]:
    """``plain`` tasks (the last ones of the first topic) get replies without a boxed answer.

    Questions never repeat, neither within the set nor against the tasks in ``avoid``.
    """
    taken = {t.question for t in avoid}
    rng = random.Random(seed)
    tasks = []
    for topic in TOPICS:
        seen = set()
        for i in range(per_topic):
            a, b, c = (rng.randint(3, 9) for _ in range(3))
            while (a, b, c) in seen or _question(topic, a, b, c) in taken:
                a, b, c = (rng.randint(3, 9) for _ in range(3))
            seen.add((a, b, c))
            question = _question(topic, a, b, c)
            meta = {"label": topic, "difficulty": i % 6}
            if topic == "orchard" and i >= per_topic - plain:
                meta["style"] = "plain"
            tasks.append(TaskInstance(id=f"{prefix}-{topic}-{i:02d}", question=question, answer=str(a * b * c),
                                      metadata=meta))
    return tasks


def program_code(level, name: str, tail: bool = False) -> str:
    tag = "<lvl:x>" if level == -1 else f"<lvl:{level}>"
    src = "ghost.answer" if level == "invalid" else "cot.answer"
    lines = [
        f'workflow {json.dumps(name)} version 1',
        "",
        'agent solver(role="careful problem solver", temperature=0.5, outputs=[answer])',
        "",
        f'call cot = solver(task) "Multiply the counts one at a time and box the result. {tag}"',
        f"extract final = {src} [{json.dumps(BOXED_PATTERN)}] fallback=raw",
    ]
    if tail:
        lines.append(f"extract tail = final.answer [{json.dumps(TAIL_PATTERN)}] fallback=raw")
        lines.append("return tail.answer")
    else:
        lines.append("return final.answer")
    return "\n".join(lines) + "\n"


def proposal(level, name: str, reflection: str | None = None, tail: bool = False) -> str:
    body = {"thought": f"Try a workflow at level {level}.", "name": name, "code": program_code(level, name, tail)}
    if reflection is not None:
        body = {"reflection": reflection, **body}
    return json.dumps(body)


def optimizer_rules(n_outer: int = 3, n_inner: int = 6) -> list[dict]:
    rules = []
    for i, level in REFLECT_SCHEDULE.items():
        rules.append({"all": ["still gets the following cases wrong", f"Outer iteration {i} of "],
                      "response": proposal(level, f"Reflect-{i}", reflection="Carry the partial products.")})
    for i, levels in MERGE_SCHEDULE.items():
        for attempt, level in enumerate(levels, start=1):
            rules.append({"regex": rf"Outer iteration {i} of \d+: merge the subtask results, attempt {attempt}\.",
                          "response": proposal(level, f"Merged-{i}")})
        rules.append({"regex": rf"Outer iteration {i} of \d+: merge the subtask results",
                      "response": proposal(levels[-1], f"Merged-{i}")})
    for (topic, i, j), level in INNER_SCHEDULE.items():
        rules.append({"regex": rf"Subtask c\d+ \({topic}\): outer iteration {i} of \d+, update {j} of",
                      "response": proposal(level, f"{topic}-{i}-{j}")})
    rules.append({"regex": r"Subtask c\d+ \((\w+)\): outer iteration \d+ of \d+, update \d+ of",
                  "response": proposal(-1, "Stalled")})
    return rules


def describe_rules() -> list[dict]:
    return [{"all": ["Below are sample questions", place],
             "response": f"Counting problems set at a {place}: three small counts are multiplied together."}
            for place, *_ in TOPICS.values()]


def adapt_rules() -> list[dict]:
    rules = []
    for level in range(0, 6):
        rules.append({"all": ["## Current group of problems", f"<lvl:{level}>"],
                      "response": proposal(level, f"Adapted-{level}", tail=True)})
    return rules


def executor_rules(tasks) -> list[dict]:
    rules = []
    for t in tasks:
        d = t.metadata["difficulty"]
        gate = f"<lvl:[{d}-5]>"
        if d == 0:
            gate = f"(?:{gate}|{re.escape(SEED_LEVEL_TEXT)})"
        if t.metadata.get("style") == "plain":
            reply = f"Multiplying step by step, the total is {t.answer}"
        else:
            reply = f"Multiplying step by step gives {t.answer}.\n\\boxed{{{t.answer}}}"
        rules.append({"regex": rf"(?s)(?=.*{re.escape(EXEC_SENTINEL)})(?=.*{gate})(?=.*{re.escape(t.question)})",
                      "response": reply})
    rules.append({"match": EXEC_SENTINEL, "response": "I am not sure.\n\\boxed{0}"})
    return rules


def world_rules(tasks) -> list[dict]:
    return optimizer_rules() + describe_rules() + adapt_rules() + executor_rules(tasks)


def cli_world(per_topic: int = 50, seed: int = 0, plain: int = 2, split_seed: int = 0):
    """Corpus for CLI runs: ``plain`` orchard tasks that land on the test side of a 1:4 split."""
    from flowmeta.tasks import split_corpus

    tasks = make_tasks(per_topic, seed=seed, prefix="q")
    _, test = split_corpus(tasks, (1, 4), seed=split_seed)
    test_ids = {t.id for t in test}
    picks = [t.id for t in tasks if t.id in test_ids and t.label == "orchard" and t.metadata["difficulty"] <= 4]
    chosen = set(picks[:plain])
    out = []
    for t in tasks:
        if t.id in chosen:
            t = TaskInstance(id=t.id, question=t.question, answer=t.answer, metadata={**t.metadata, "style": "plain"})
        out.append(t)
    return out


def write_world(directory, tasks) -> tuple[str, str]:
    """Write ``corpus.jsonl`` and ``rules.json`` for ``tasks``; returns both paths."""
    from pathlib import Path

    from flowmeta.tasks import write_corpus

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    corpus = directory / "corpus.jsonl"
    rules = directory / "rules.json"
    write_corpus(tasks, corpus)
    rules.write_text(json.dumps({"rules": world_rules(tasks)}, indent=1), encoding="utf-8")
    return str(corpus), str(rules)
