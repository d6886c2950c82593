import pytest

from deltabose import mollifier, specfun


@pytest.fixture(scope="session")
def bump():
    return mollifier.standard_bump()


@pytest.fixture(scope="session")
def c0(bump):
    return specfun.fit_c0(bump)


@pytest.fixture(scope="session")
def params(bump, c0):
    return specfun.scalar_params(bump, 0.1, 0.0, c0=c0)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    return request.config.stash.setdefault(_ACCEPTANCE, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
