import json

import pytest

from flowmeta.errors import BudgetExceeded, EmptyAnswer, ExtractionFailed, MalformedOutput
from flowmeta.llm import ScriptedBackend
from flowmeta.tasks import TaskInstance
from flowmeta.workflow import ExecutionLimits, execute_program, parse_program, seed_program

TASK = TaskInstance(id="t1", question="What is 6 times 7?", answer="42")


def run(src, rules, limits=None, task=TASK):
    backend = ScriptedBackend(rules)
    program = src if not isinstance(src, str) else parse_program(src)
    return execute_program(program, task, backend, limits), backend


def test_seed_extracts_boxed_answer():
    trace, backend = run(seed_program(), [{"match": "6 times 7", "response": "6*7 = 42.\n\\boxed{42}"}])
    assert trace.final.content == "42"
    assert trace.backend_calls == 1
    prompt = backend.requests[0].flatten()
    assert "# Your Task:\nWhat is 6 times 7?" in prompt
    assert "Given the above, follow this instruction:" in prompt


def test_extract_falls_back_to_raw_content():
    trace, _ = run(seed_program(), [{"match": "6 times 7", "response": "forty-two"}])
    assert trace.final.content == "forty-two"


def test_extract_without_fallback_raises():
    src = '''workflow "w"
agent a(outputs=[answer])
call c = a(task) "solve"
extract e = c.answer ["\\\\boxed\\\\{(.*)\\\\}"] fallback=none
return e.answer
'''
    with pytest.raises(ExtractionFailed):
        run(src, [{"match": "solve", "response": "no box here"}])


VOTE = '''workflow "vote"
agent a(outputs=[answer])
fanout f {
  call x = a(task) "first"
  call y = a(task) "second"
  call z = a(task) "third"
}
vote v = [x.answer, y.answer, z.answer]
return v.answer
'''


def test_majority_vote():
    trace, _ = run(VOTE, [{"match": "first", "response": "41"}, {"match": "second", "response": "42"},
                          {"match": "third", "response": "42"}])
    assert trace.final.content == "42"
    votes = [s for s in trace.steps if s.node_id == "v"][0].records[1]
    assert votes.content == "2"


def test_tie_without_policy_takes_smallest_answer():
    src = VOTE.replace('call z = a(task) "third"\n', "").replace(", z.answer", "")
    trace, _ = run(src, [{"match": "first", "response": "b"}, {"match": "second", "response": "a"}])
    assert trace.final.content == "a"


def test_tie_goes_to_referee_select():
    src = '''workflow "vote"
agent a(outputs=[answer])
agent judge(outputs=[reason, choice])
call x = a(task) "first"
call y = a(task) "second"
select ref = judge(task) "choose one" pick=choice
vote v = [x.answer, y.answer] tie=ref
return v.answer
'''
    rules = [{"match": "choose one", "response": json.dumps({"reason": "checked", "choice": "b"})},
             {"match": "first", "response": "a"}, {"match": "second", "response": "b"}]
    trace, backend = run(src, rules)
    assert trace.final.content == "b"
    judge_prompts = [r.flatten() for r in backend.requests if "choose one" in r.flatten()]
    assert len(judge_prompts) == 1
    assert "### candidate" in judge_prompts[0]


def test_referee_skipped_without_tie():
    src = '''workflow "vote"
agent a(outputs=[answer])
agent judge(outputs=[choice])
call x = a(task) "first"
call y = a(task) "second"
select ref = judge(task) "choose one" pick=choice
vote v = [x.answer, y.answer] tie=ref
return v.answer
'''
    trace, backend = run(src, [{"match": "first", "response": "7"}, {"match": "second", "response": "7"}])
    assert trace.final.content == "7"
    assert trace.backend_calls == 2


LOOP = '''workflow "loop"
agent a(outputs=[answer])
agent checker(outputs=[feedback, ok])
call c = a(task) "solve"
loop v(subject=c.answer, max=3) {
  verify chk = checker(task, v.current) "verify" gate=ok
  call fix = a(task, v.current, chk.feedback) "revise"
  update fix.answer
}
return v.current
'''


def test_loop_stops_when_gate_true():
    calls = {"n": 0}

    def checker(prompt):
        calls["n"] += 1
        return json.dumps({"feedback": "redo", "ok": "true" if calls["n"] == 2 else "false"})

    trace, _ = run(LOOP, [{"match": "verify", "response": checker}, {"match": "revise", "response": "42"},
                          {"match": "solve", "response": "40"}])
    assert trace.final.content == "42"
    assert calls["n"] == 2
    assert [s for s in trace.steps if s.node_id == "v"][0].records[1].content == "True"


def test_loop_stops_at_max_rounds():
    trace, _ = run(LOOP, [{"match": "verify", "response": json.dumps({"feedback": "no", "ok": "false"})},
                          {"match": "revise", "response": "43"}, {"match": "solve", "response": "40"}])
    verifies = [s for s in trace.steps if s.node_id == "chk"]
    assert len(verifies) == 3
    assert [s for s in trace.steps if s.node_id == "v"][0].records[1].content == "False"


def test_call_budget_is_enforced():
    rules = [{"match": "verify", "response": json.dumps({"feedback": "no", "ok": "no"})},
             {"match": "revise", "response": "43"}, {"match": "solve", "response": "40"}]
    with pytest.raises(BudgetExceeded):
        run(LOOP, rules, ExecutionLimits(max_calls=4))
    trace, _ = run(LOOP, rules, ExecutionLimits(max_calls=7))
    assert trace.backend_calls == 7


def test_empty_answer_raises():
    with pytest.raises(EmptyAnswer):
        run(seed_program(), [{"match": "6 times 7", "response": '{"answer": "  "}'}])


def test_repair_round_is_traced():
    src = '''workflow "w"
agent a(outputs=[thinking, answer])
call c = a(task) "solve"
return c.answer
'''
    rules = [{"match": "missing the keys", "response": json.dumps({"thinking": "t", "answer": "42"})},
             {"match": "solve", "response": "just 42"}]
    trace, _ = run(src, rules)
    assert trace.final.content == "42"
    assert [s.repair for s in trace.steps] == [False, True]
    assert trace.backend_calls == 2


def test_malformed_after_repair_raises():
    src = 'workflow "w"\nagent a(outputs=[thinking, answer])\ncall c = a(task) "solve"\nreturn c.answer\n'
    with pytest.raises(MalformedOutput):
        run(src, [{"match": "solve", "response": "nothing structured"}])


def test_info_records_carry_author_and_iteration():
    trace, _ = run(VOTE, [{"match": "first", "response": "1"}, {"match": "second", "response": "1"},
                          {"match": "third", "response": "1"}])
    recs = {s.node_id: s.records for s in trace.steps if s.records}
    assert recs["y"][0].iteration == 1
    assert recs["x"][0].author.startswith("a (")


def test_identical_runs_have_identical_digests():
    rules = [{"match": "6 times 7", "response": "\\boxed{42}"}]
    a, _ = run(seed_program(), rules)
    b, _ = run(seed_program(), rules)
    assert a.digest() == b.digest()
