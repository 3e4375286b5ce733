from __future__ import annotations

import json
import os
import re
import shlex
import shutil
import string
import subprocess
import tempfile
from collections import Counter
from fractions import Fraction

from ..errors import ExternalEvaluatorMissing

NUMERIC_TOLERANCE = 1e-9

METRICS = ("solve_rate_math", "f1_qa", "pass_at_1_external")


# -- math solve rate ---------------------------------------------------------


def last_boxed(text: str) -> str | None:
    """Content of the last ``\\boxed{...}`` (or ``\\fbox{...}``), braces balanced."""
    start = max(text.rfind("\\boxed{"), text.rfind("\\fbox{"))
    if start < 0:
        return None
    i = text.index("{", start) + 1
    depth = 1
    for j in range(i, len(text)):
        if text[j] == "{":
            depth += 1
        elif text[j] == "}":
            depth -= 1
            if depth == 0:
                return text[i:j]
    return None


_FRAC_RE = re.compile(r"\\[dt]?frac\{([^{}]*)\}\{([^{}]*)\}")


def normalize_math(text: str) -> str:
    s = text.strip()
    boxed = last_boxed(s)
    if boxed is not None:
        s = boxed
    s = s.replace("\\left", "").replace("\\right", "").replace("\\!", "").replace("\\,", "")
    s = s.replace("$", "").replace("\\%", "").replace("%", "")
    s = re.sub(r"\\text\{\s*([^{}]*)\}", r"\1", s)
    s = re.sub(r"\^\{?\\circ\}?", "", s)
    s = _FRAC_RE.sub(r"(\1)/(\2)", s)
    s = re.sub(r"\s+", "", s)
    s = s.rstrip(".")
    if re.fullmatch(r"-?\d{1,3}(,\d{3})+(\.\d+)?", s):
        s = s.replace(",", "")
    return s


_NUM_RE = re.compile(r"\(?(-?\d+(?:\.\d+)?)\)?(?:/\(?(-?\d+(?:\.\d+)?)\)?)?")


def as_number(s: str) -> Fraction | None:
    m = _NUM_RE.fullmatch(s)
    if not m:
        return None
    num = Fraction(m.group(1))
    if m.group(2) is not None:
        den = Fraction(m.group(2))
        if den == 0:
            return None
        num /= den
    return num


def metric_math_equal(prediction: str, gold: str) -> int:
    """1 if the prediction's (boxed) answer equals the gold answer, else 0."""
    p, g = normalize_math(prediction or ""), normalize_math(gold or "")
    if not p or not g:
        return 0
    if p == g:
        return 1
    a, b = as_number(p), as_number(g)
    if a is None or b is None:
        return 0
    return int(a == b or abs(float(a - b)) <= NUMERIC_TOLERANCE)


# -- token F1 ----------------------------------------------------------------

_ARTICLES = re.compile(r"\b(a|an|the)\b")
_PUNCT = set(string.punctuation)


def normalize_answer(s: str) -> str:
    s = s.lower()
    s = "".join(ch for ch in s if ch not in _PUNCT)
    s = _ARTICLES.sub(" ", s)
    return " ".join(s.split())


def metric_f1(prediction: str, gold: str) -> float:
    pred = normalize_answer(prediction or "").split()
    ref = normalize_answer(gold or "").split()
    if not pred or not ref:
        return 0.0
    same = sum((Counter(pred) & Counter(ref)).values())
    # 2PR/(P+R) with P = same/|pred|, R = same/|ref|, as one integer division
    return 2 * same / (len(pred) + len(ref))


# -- external pass@1 ---------------------------------------------------------


class ExternalCommand:
    """Verdict from a user-supplied command; exit status 0 means the prediction passes.

    ``template`` may use ``{prediction_file}`` and ``{task_file}``; a JSON object
    with ``prediction`` and ``task`` is also written to the command's stdin.
    """

    def __init__(self, template: str | None, timeout: float = 60.0):
        if not template:
            raise ExternalEvaluatorMissing("no external evaluator command configured")
        argv = shlex.split(template)
        if not argv or shutil.which(argv[0]) is None:
            raise ExternalEvaluatorMissing(f"external evaluator {argv[0] if argv else template!r} not found")
        self.template = template
        self.timeout = timeout

    def __call__(self, prediction: str, task) -> int:
        task_json = task.to_json() if hasattr(task, "to_json") else dict(task)
        with tempfile.TemporaryDirectory() as tmp:
            pred_path = os.path.join(tmp, "prediction.txt")
            task_path = os.path.join(tmp, "task.json")
            with open(pred_path, "w", encoding="utf-8") as fh:
                fh.write(prediction)
            with open(task_path, "w", encoding="utf-8") as fh:
                json.dump(task_json, fh, ensure_ascii=False)
            argv = [a.format(prediction_file=pred_path, task_file=task_path) for a in shlex.split(self.template)]
            stdin = json.dumps({"prediction": prediction, "task": task_json}, ensure_ascii=False)
            try:
                proc = subprocess.run(argv, input=stdin, text=True, capture_output=True, timeout=self.timeout)
            except subprocess.TimeoutExpired:
                return 0
        return int(proc.returncode == 0)


def metric_pass_at_1_external(prediction: str, task, command) -> int:
    """Run the external judge; ``command`` is a template string or an :class:`ExternalCommand`."""
    judge = command if isinstance(command, ExternalCommand) else ExternalCommand(command)
    return judge(prediction, task)


def make_scorer(metric: str, external_command: str | None = None):
    """Return ``score(prediction, task) -> float`` for a metric name."""
    if metric == "solve_rate_math":
        return lambda pred, task: float(metric_math_equal(pred, task.answer))
    if metric == "f1_qa":
        return lambda pred, task: metric_f1(pred, task.answer)
    if metric == "pass_at_1_external":
        judge = ExternalCommand(external_command)
        return lambda pred, task: float(judge(pred, task))
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
