import json

import pytest

from toolgen.indexer import IndexScheme, make_index
from toolgen.registry import parse_tool_record, from_apis
from toolgen.synthetic import YOUTUBE_HUB_RECORD, make_registry


@pytest.fixture
def youtube_registry():
    return from_apis(parse_tool_record(YOUTUBE_HUB_RECORD))


@pytest.fixture(scope="session")
def small_registry():
    return make_registry(60, seed=3, include_youtube=True)


@pytest.fixture(scope="session")
def atomic(small_registry):
    vocab, index = make_index(small_registry, IndexScheme(kind="atomic"))
    return vocab, index


@pytest.fixture
def tool_dir(tmp_path):
    d = tmp_path / "tools"
    d.mkdir()
    (d / "youtube.json").write_text(json.dumps(YOUTUBE_HUB_RECORD))
    return d


# acceptance results, filled by tests/test_acceptance.py and printed at the end
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, line = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:>2}. {line}")
