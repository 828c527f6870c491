import pytest
from hypothesis import HealthCheck, settings

from s2cubic.fixture import default_T

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def T():
    return default_T()


@pytest.fixture
def acceptance(request):
    lines = request.config.stash.setdefault(ACCEPTANCE_KEY, {})

    def record(k, ok, detail):
        line = f"ACCEPTANCE {k}: {'PASS' if ok else 'FAIL'} ({detail})"
        lines[k] = line
        print(line)
        assert ok, line

    return record


ACCEPTANCE_KEY = pytest.StashKey[dict]()


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, {})
    if lines:
        terminalreporter.section("acceptance")
        for k in sorted(lines):
            terminalreporter.write_line(lines[k])
