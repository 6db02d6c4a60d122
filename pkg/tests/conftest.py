import json
from pathlib import Path

import pytest

from policygate.adapters import HashEmbedder, mock_adapter
from policygate.evaluation import load_scenarios
from policygate.pipeline import build_policy, bundled, default_world

FIXTURES = Path(__file__).parent / "fixtures"


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text(encoding="utf-8")


def fixture_json(name: str):
    return json.loads(fixture_text(name))


@pytest.fixture
def llm():
    return mock_adapter(default_world())


@pytest.fixture
def embedder():
    return HashEmbedder(seed=0)


@pytest.fixture(scope="session")
def policy():
    return build_policy(bundled("mini_regulation.json"), mock_adapter(default_world()))


@pytest.fixture(scope="session")
def scenarios():
    return load_scenarios(bundled("scenarios.json"))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
