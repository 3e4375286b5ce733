import json

import numpy as np
import pytest

from flowmeta.errors import BadK, DuplicateId, FormatError, TooFewTasks
from flowmeta.llm import ScriptedBackend
from flowmeta.tasks import (
    HashingEmbedder,
    LloydKMeans,
    SubtaskCluster,
    TaskInstance,
    cluster_tasks,
    corpus_digest,
    describe_prompt,
    describe_subtask,
    kmeans_cluster,
    load_corpus,
    split_corpus,
    wcss,
    write_corpus,
)

import staged


def tasks_n(n):
    return [TaskInstance(id=f"t{i}", question=f"question number {i}", answer=str(i)) for i in range(n)]


# -- loading ----------------------------------------------------------------


def write_lines(tmp_path, lines):
    path = tmp_path / "c.jsonl"
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_load_round_trip(tmp_path):
    tasks = staged.make_tasks(3)
    path = tmp_path / "c.jsonl"
    write_corpus(tasks, path)
    loaded = load_corpus(path)
    assert loaded == tasks
    assert corpus_digest(loaded) == corpus_digest(tasks)


def test_blank_lines_are_skipped(tmp_path):
    path = write_lines(tmp_path, ['{"id": 1, "question": "q", "answer": 2}', "", "  "])
    (task,) = load_corpus(path)
    assert task.id == "1" and task.answer == "2"


@pytest.mark.parametrize("line,fragment", [
    ("not json", "invalid JSON"),
    ("[1, 2]", "JSON object"),
    ('{"id": "a", "answer": "1"}', "question"),
    ('{"id": "a", "question": "", "answer": "1"}', "non-empty"),
    ('{"id": "a", "question": "q", "answer": "1", "metadata": 3}', "metadata"),
])
def test_format_errors_name_the_line(tmp_path, line, fragment):
    path = write_lines(tmp_path, ['{"id": "ok", "question": "q", "answer": "1"}', line])
    with pytest.raises(FormatError) as info:
        load_corpus(path)
    assert info.value.line == 2
    assert fragment in str(info.value)


def test_duplicate_id(tmp_path):
    path = write_lines(tmp_path, ['{"id": "a", "question": "q", "answer": "1"}'] * 2)
    with pytest.raises(DuplicateId) as info:
        load_corpus(path)
    assert info.value.line == 2


# -- split ------------------------------------------------------------------


def test_split_1000_at_one_to_four():
    tasks = tasks_n(1000)
    val, test = split_corpus(tasks, (1, 4), seed=7)
    assert (len(val), len(test)) == (200, 800)
    assert {t.id for t in val}.isdisjoint({t.id for t in test})
    again = split_corpus(tasks, (1, 4), seed=7)
    assert [t.id for t in again[0]] == [t.id for t in val]
    other = split_corpus(tasks, (1, 4), seed=8)
    assert [t.id for t in other[0]] != [t.id for t in val]


def test_split_remainder_goes_to_test():
    val, test = split_corpus(tasks_n(12), (1, 4))
    assert (len(val), len(test)) == (2, 10)


def test_split_too_few():
    with pytest.raises(TooFewTasks):
        split_corpus(tasks_n(4), (1, 4))


# -- clustering -------------------------------------------------------------


def test_label_mode_groups_by_label():
    tasks = staged.make_tasks(5)
    clusters = cluster_tasks(tasks, 3)
    assert sorted(c.label for c in clusters) == sorted(staged.TOPICS)
    for c in clusters:
        assert {t.label for t in tasks if t.id in c.members} == {c.label}


def test_label_mode_requires_labels():
    with pytest.raises(ValueError):
        cluster_tasks(tasks_n(6), 2, mode="labels")


def test_embed_mode_separates_topics():
    tasks = staged.make_tasks(8)
    clusters = cluster_tasks(tasks, 3, mode="embed", seed=3)
    by_id = {t.id: t for t in tasks}
    for c in clusters:
        assert c.label is None
        assert len({by_id[m].label for m in c.members}) == 1
    assert cluster_tasks(tasks, 3, mode="embed", seed=3) == clusters


def test_cluster_ids_follow_first_appearance():
    clusters = cluster_tasks(staged.make_tasks(4), 3, mode="embed")
    assert [c.id for c in clusters] == [0, 1, 2]
    assert clusters[0].members[0] == "t-orchard-00"


def test_cluster_json_round_trip():
    c = SubtaskCluster(id=2, members=["a", "b"], centroid=[0.5, 0.25], label="x", description="d")
    assert SubtaskCluster.from_json(json.loads(json.dumps(c.to_json()))) == c
    assert c.key == "c2"


def test_hashing_embedder_is_deterministic_and_normalised():
    emb = HashingEmbedder(dim=64)
    a = emb.transform(["the farmer counts apples", "a sailor on the pier"])
    b = HashingEmbedder(dim=64).transform(["the farmer counts apples", "a sailor on the pier"])
    assert np.array_equal(a, b)
    assert np.allclose(np.linalg.norm(a, axis=1), 1.0)


def test_describe_prompt_has_questions_but_no_answers():
    tasks = staged.make_tasks(6)
    by_id = {t.id: t for t in tasks}
    cluster = cluster_tasks(tasks, 3)[0]
    backend = ScriptedBackend(staged.describe_rules())
    text = describe_subtask(cluster, by_id, backend, sample_size=5)
    assert cluster.description == text
    prompt = backend.requests[0].flatten()
    assert prompt.count("## Question") == 5
    for tid in cluster.members:
        # answers are products like "126"; no question contains one, so a substring scan is exact
        assert by_id[tid].answer not in prompt
    assert describe_prompt(["q1"]).count("## Question 1") == 1


# -- k-means ----------------------------------------------------------------


def partitions(n, k):
    """All partitions of range(n) into exactly k non-empty groups (restricted growth strings)."""
    def rec(i, labels, used):
        if i == n:
            if used == k:
                yield list(labels)
            return
        for lab in range(min(used + 1, k)):
            labels.append(lab)
            yield from rec(i + 1, labels, max(used, lab + 1))
            labels.pop()
    yield from rec(0, [], 0)


def exhaustive_wcss(X, k):
    best = np.inf
    for labels in partitions(len(X), k):
        labels = np.array(labels)
        total = sum(((X[labels == j] - X[labels == j].mean(axis=0)) ** 2).sum() for j in range(k))
        best = min(best, total)
    return best


def test_partition_enumerator_counts():
    # Stirling numbers of the second kind
    assert sum(1 for _ in partitions(5, 2)) == 15
    assert sum(1 for _ in partitions(8, 3)) == 966
    assert sum(1 for _ in partitions(8, 4)) == 1701


def test_kmeans_near_exhaustive_optimum_and_monotone():
    rng = np.random.default_rng(20240501)
    trials = within = monotone = 0
    for _ in range(300):
        n = int(rng.integers(2, 9))
        k = int(rng.integers(1, min(n, 4) + 1))
        X = rng.normal(size=(n, 2)) * rng.uniform(0.5, 5.0)
        model = LloydKMeans(n_clusters=k, n_init=10, random_state=int(rng.integers(1 << 30))).fit(X)
        opt = exhaustive_wcss(X, k)
        trials += 1
        if model.inertia_ <= opt * 1.05 + 1e-12:
            within += 1
        if all(all(b <= a + 1e-9 for a, b in zip(h, h[1:])) for h in model.all_histories_):
            monotone += 1
        assert abs(wcss(X, model.labels_, model.cluster_centers_) - model.inertia_) < 1e-9
    assert within / trials >= 0.95
    assert monotone == trials


def test_kmeans_bad_k():
    with pytest.raises(BadK):
        kmeans_cluster(np.zeros((3, 2)), 4)
    with pytest.raises(BadK):
        kmeans_cluster(np.zeros((3, 2)), 0)


def test_kmeans_duplicate_points_fill_all_clusters():
    X = np.array([[0.0, 0.0]] * 4 + [[1.0, 1.0]])
    labels, centers = kmeans_cluster(X, 3)
    assert len(set(labels.tolist())) == 3
