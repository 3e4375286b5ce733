"""Run summaries: fitness trajectories, lineage and test-phase tables."""

from __future__ import annotations

from .errors import CorruptRun
from .store import RunStore

SCHEMA_VERSION = 1


def _phase_states(store: RunStore) -> dict[str, dict]:
    return {p["name"]: p.get("state") or {} for p in store.phases}


def build_report(store: RunStore) -> dict:
    """Machine-readable summary of a run.

    ``outer`` has one point per finished outer iteration (the global workflow
    after that iteration); ``inner`` lists, per subtask and outer iteration,
    the fitness of each inner-loop candidate in order.
    """
    states = _phase_states(store)
    if "seeded" not in states:
        raise CorruptRun(f"run {store.run_id} has no seeded phase; nothing to report")
    clusters = store.read_clusters("validation") or []
    keys = [c.key for c in sorted(clusters, key=lambda c: c.id)]
    config = store.config.get("optimizer", {})
    n_outer = int(config.get("n_outer", 0)) or max(
        (int(n.split(":")[0][6:]) for n in states if n.startswith("outer-") and n.endswith(":complete")), default=0)

    def entry_json(eid):
        e = store.get(eid)
        return {"id": e.id, "name": e.name, "fitness": dict(sorted(e.fitness.items())),
                "mean": e.mean_fitness(keys)}

    outer = []
    for i in range(1, n_outer + 1):
        state = states.get(f"outer-{i}:complete")
        if state is None:
            break
        best = state.get("best", {})
        outer.append({"outer": i, "global": entry_json(state["global_id"]),
                      "best": {k: store.get(best[k]).fitness[k] for k in keys if k in best}})

    inner = {k: [] for k in keys}
    for e in store.entries():
        if e.role != "inner" or e.subtask not in inner:
            continue
        i, j = e.generation
        series = inner[e.subtask]
        while len(series) < i:
            series.append({"outer": len(series) + 1, "steps": []})
        series[i - 1]["steps"].append({"step": j, "id": e.id, "fitness": e.fitness.get(e.subtask, 0.0),
                                       "status": e.status})

    seed_state = states["seeded"]
    last = [p["state"] for p in store.phases if (p.get("state") or {}).get("global_id")][-1]
    report = {
        "schema_version": SCHEMA_VERSION,
        "run_id": store.run_id,
        "subtasks": [{"key": c.key, "label": c.label, "size": len(c.members)} for c in sorted(clusters, key=lambda c: c.id)],
        "seed": entry_json(seed_state["global_id"]),
        "outer": outer,
        "inner": inner,
        "final": entry_json(last["global_id"]),
        "counters": last.get("counters", {}),
        "lineage": [{"id": e.id, "name": e.name, "parent": e.parent, "role": e.role,
                     "generation": list(e.generation), "status": e.status, "subtask": e.subtask}
                    for e in store.entries()],
        "phases": [p["name"] for p in store.phases],
        "tests": {name: store.read_report(name) for name in ("test-adapt", "test-no-adapt")
                  if store.read_report(name) is not None},
    }
    return report


def _table(header, rows) -> str:
    cells = [list(map(str, header))] + [[str(c) for c in r] for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def render_fitness_table(report: dict) -> str:
    keys = [s["key"] for s in report["subtasks"]]
    rows = [["seed", report["seed"]["name"]] + [f"{report['seed']['fitness'].get(k, 0):.3f}" for k in keys]
            + [f"{report['seed']['mean']:.3f}"]]
    for point in report["outer"]:
        g = point["global"]
        rows.append([f"outer {point['outer']}", g["name"]] + [f"{g['fitness'].get(k, 0):.3f}" for k in keys]
                    + [f"{g['mean']:.3f}"])
    text = "Global workflow after each outer iteration\n" + _table(["stage", "workflow", *keys, "mean"], rows)
    best_rows = [[f"outer {p['outer']}"] + [f"{p['best'].get(k, 0):.3f}" for k in keys] for p in report["outer"]]
    if best_rows:
        text += "\n\nBest fitness per subtask\n" + _table(["stage", *keys], best_rows)
    return text


def render_test_table(test: dict) -> str:
    rows = [[r["cluster"], r["label"] or "", r["size"], f"{r['score']:.3f}", "yes" if r["adapted"] else "no",
             r["workflow"]] for r in test["rows"]]
    o = test["overall"]
    rows.append(["overall", "", o["size"], f"{o['score']:.3f}", "", ""])
    mode = "with adaptation" if test["adapt"] else "without adaptation"
    return f"Test phase ({mode}, metric {test['metric']})\n" + _table(
        ["cluster", "label", "tasks", "score", "adapted", "workflow"], rows)


def render_report(report: dict) -> str:
    parts = [f"Run {report['run_id']}", render_fitness_table(report)]
    keys = [s["key"] for s in report["subtasks"]]
    inner_rows = []
    for k in keys:
        for block in report["inner"].get(k, []):
            steps = " ".join(f"{s['fitness']:.2f}" + ("!" if s["status"] != "ok" else "") for s in block["steps"])
            inner_rows.append([k, block["outer"], steps])
    if inner_rows:
        parts.append("Inner-loop candidates (! marks a rejected proposal)\n"
                     + _table(["subtask", "outer", "fitness by step"], inner_rows))
    lineage = [[n["id"], n["name"], n["role"], "(%d, %d)" % tuple(n["generation"]),
                "-" if n["parent"] is None else n["parent"], n["status"]] for n in report["lineage"]]
    parts.append("Lineage\n" + _table(["id", "name", "role", "generation", "parent", "status"], lineage))
    for test in report["tests"].values():
        parts.append(render_test_table(test))
    c = report["counters"]
    if c:
        parts.append(f"Optimizer calls: {c.get('optimizer', 0)} proposals, {c.get('repair', 0)} repairs, "
                     f"{c.get('describe', 0)} descriptions")
    return "\n\n".join(parts) + "\n"
