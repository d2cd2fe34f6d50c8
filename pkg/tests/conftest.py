"""Shared pytest hooks: acceptance criteria report one line each in the terminal summary."""
import pytest


def pytest_configure(config):
    config.acceptance = {}


@pytest.fixture
def criterion(request):
    """record(gid, name, ok, detail): one sub-check of an acceptance criterion."""
    def record(gid, name, ok, detail=""):
        request.config.acceptance.setdefault(gid, []).append((name, bool(ok), detail))
        return ok
    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = getattr(config, "acceptance", {})
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for gid in sorted(results, key=lambda g: int(g[1:])):
        parts = results[gid]
        ok = all(p[1] for p in parts)
        detail = "; ".join(f"{n}: {'pass' if o else 'FAIL'} ({d})" for n, o, d in parts)
        terminalreporter.write_line(f"{gid} {'PASS' if ok else 'FAIL'} | {detail}")
