from __future__ import annotations

import pytest

_RESULTS = pytest.StashKey[dict]()


@pytest.fixture
def report(request):
    """Record one pass/fail line for an acceptance criterion."""
    results = request.config.stash.setdefault(_RESULTS, {})

    def record(criterion: int, ok: bool, detail: str) -> bool:
        results[criterion] = (ok, detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_RESULTS, {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for criterion in sorted(results):
        ok, detail = results[criterion]
        terminalreporter.write_line(f"criterion {criterion}: {'PASS' if ok else 'FAIL'}  {detail}")
