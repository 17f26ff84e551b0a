from __future__ import annotations

import json
import random
import sys
from pathlib import Path

import pytest

from tgg.graph import Event, LabelAssignment, Scenario

FIXTURES = Path(__file__).parent / "fixtures"
sys.path.insert(0, str(Path(__file__).parent))


def chain_scenario(sid: str, n: int, split: str = "eval", domain: str = "daily") -> Scenario:
    events = [Event(f"{sid}-e{i}", f"do step {i} of {sid}") for i in range(n)]
    edges = [(events[i].id, events[i + 1].id) for i in range(n - 1)]
    return Scenario(sid, f"goal {sid}", events, edges, domain=domain, split=split)


def random_dag_scenario(sid: str, rng: random.Random, n_min: int = 4, n_max: int = 9, split: str = "eval") -> Scenario:
    """Random DAG over a hidden topological order, weakly connected."""
    n = rng.randint(n_min, n_max)
    events = [Event(f"{sid}-e{i}", f"event {i} in {sid}") for i in range(n)]
    edges = set()
    for j in range(1, n):
        edges.add((events[rng.randrange(j)].id, events[j].id))
    for _ in range(rng.randint(0, 2)):
        i, j = sorted(rng.sample(range(n), 2))
        edges.add((events[i].id, events[j].id))
    shuffled = events[:]
    rng.shuffle(shuffled)
    return Scenario(sid, f"goal {sid}", shuffled, sorted(edges), split=split)


def synthetic_corpus(count: int, seed: int = 0, split: str = "eval", prefix: str = "s") -> list[Scenario]:
    rng = random.Random(seed)
    return [random_dag_scenario(f"{prefix}{i:03d}", rng, split=split) for i in range(count)]


@pytest.fixture
def bombing():
    d = json.loads((FIXTURES / "bombing_attacks.json").read_text())
    scenario = Scenario.from_dict(d["scenario"])
    assignment = LabelAssignment(d["labels"], "alphabetical")
    return scenario, assignment, d["presentation_order"]


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


# ---- acceptance summary -----------------------------------------------------

_ACCEPTANCE: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label, title): acceptance criterion covered by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    label, title = marker.args
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        verdict = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
        _ACCEPTANCE[label] = (verdict, title)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")

    def order(label):
        num = "".join(ch for ch in label if ch.isdigit())
        return (int(num or 0), label)

    for label in sorted(_ACCEPTANCE, key=order):
        verdict, title = _ACCEPTANCE[label]
        terminalreporter.write_line(f"[{verdict}] criterion {label}: {title}")
