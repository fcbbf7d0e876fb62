from __future__ import annotations

from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"

# criterion number -> (title, passed); filled in by test_acceptance.py
ACCEPTANCE_RESULTS: dict[int, tuple[str, bool]] = {}


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def config_path() -> Path:
    return FIXTURES / "config.yaml"


@pytest.fixture(scope="session")
def episodes() -> list[dict]:
    import yaml

    return yaml.safe_load((FIXTURES / "episodes.yaml").read_text(encoding="utf-8"))["episodes"]


@pytest.fixture(scope="session")
def fixture_engine():
    from reap.config import load_config
    from reap.engine import Engine

    return Engine.from_config(load_config(FIXTURES / "config.yaml"))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_RESULTS):
        title, ok = ACCEPTANCE_RESULTS[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}")
