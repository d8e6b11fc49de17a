import pytest

from gopher import Executor

_RESULTS = pytest.StashKey[list]()


@pytest.fixture
def ex():
    """Deterministic executor with a virtual clock, installed as the default."""
    with Executor(deterministic=True, virtual_time=True) as e:
        yield e


@pytest.fixture
def pool():
    with Executor(workers=4) as e:
        yield e


@pytest.fixture
def criterion(request):
    """Record one acceptance line: ``criterion(n, text)`` then run the check."""
    log = request.config.stash.setdefault(_RESULTS, [])
    entry = {}

    def declare(number: int, text: str):
        entry.update(number=number, text=text)

    yield declare
    if entry:
        failed = getattr(request.node, "rep_call", None)
        ok = failed is not None and failed.passed
        log.append((entry["number"], entry["text"], ok))


@pytest.hookimpl(wrapper=True)
def pytest_runtest_makereport(item, call):
    rep = yield
    if rep.when == "call":
        item.rep_call = rep
    return rep


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number, text, ok in sorted(results):
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} [{number:>2}] {text}")
