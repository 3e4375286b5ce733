import sys
from pathlib import Path

import pytest

TESTS = Path(__file__).parent
sys.path.insert(0, str(TESTS))

import staged  # noqa: E402


def pytest_addoption(parser):
    parser.addoption("--live", action="store_true", default=False,
                     help="run the live smoke test against a real endpoint")


@pytest.fixture
def golden_dir():
    return TESTS / "golden"


@pytest.fixture(scope="session")
def staged_world():
    """Train and test task sets with disjoint questions, plus one backend serving both."""
    from flowmeta.llm import ScriptedBackend

    train = staged.make_tasks(20, seed=1, prefix="tr")
    test = staged.make_tasks(10, seed=2, prefix="te", plain=2, avoid=train)
    backend = ScriptedBackend(staged.world_rules(train + test))
    return train, test, backend


@pytest.fixture(scope="session")
def staged_run(staged_world, tmp_path_factory):
    """One finalized full run on the staged training set: ``(store, final entry, config)``."""
    from flowmeta.optim import OptimizerConfig, run_meta_optimization
    from flowmeta.store import RunStore

    train, _, backend = staged_world
    cfg = OptimizerConfig(n_outer=3, n_inner=6, epsilon=0.02)
    store = RunStore.create(tmp_path_factory.mktemp("staged") / "run", "staged", {"optimizer": cfg.to_json()})
    final, _ = run_meta_optimization(train, cfg, backend, m=3, store=store)
    store.finalize()
    return store, final, cfg


# -- one PASS/FAIL line per acceptance criterion ------------------------------

_criteria: dict[int, tuple[str, str]] = {}


def pytest_collection_modifyitems(items):
    for item in items:
        name = getattr(item, "originalname", item.name)
        if item.module.__name__ == "test_acceptance" and name.startswith("test_criterion_"):
            number = int(name.split("_")[2])
            doc = (item.function.__doc__ or name).strip().splitlines()[0]
            _criteria.setdefault(number, ("NOT RUN", doc))


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" not in report.nodeid:
        return
    number = int(report.nodeid.split("test_criterion_")[1].split("_")[0])
    status, title = _criteria.get(number, ("NOT RUN", report.nodeid))
    if report.skipped:
        status = "SKIP"
    elif report.failed:
        status = "FAIL"
    elif report.when == "call" and status != "FAIL":
        status = "PASS"
    _criteria[number] = (status, title)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        status, title = _criteria[number]
        terminalreporter.write_line(f"criterion {number:2d}: {status:<4} {title}")
