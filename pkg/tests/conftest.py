import numpy as np
import pytest

from implicit_auth.context import train_forest
from implicit_auth.dataset import build_dataset
from implicit_auth.pipeline import enroll
from implicit_auth.synth import make_population


def naive_dft(x: np.ndarray) -> np.ndarray:
    """O(n^2) DFT straight from the definition."""
    n = len(x)
    k = np.arange(n)
    return np.array([np.sum(x * np.exp(-2j * np.pi * f * k / n)) for f in range(n)])


@pytest.fixture(scope="session")
def small_population():
    return make_population(6, "separable", seed=0)


@pytest.fixture(scope="session")
def small_dataset(small_population):
    return build_dataset(small_population, windows_per_context=80, session_seed=0)


@pytest.fixture(scope="session")
def owner_bank(small_dataset):
    others = small_dataset.user != "u00"
    forest = train_forest(small_dataset.phone[others], small_dataset.context[others], n_trees=30, seed=0)
    return enroll(small_dataset, "u00", forest, rho=1.0, data_size=160, seed=0)


# -- acceptance criteria summary ------------------------------------------------

_CRITERIA: dict = {}
_DETAILS: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when == "teardown":
        return
    if rep.when == "call" or rep.failed or rep.skipped:
        number, title = marker.args
        status = "PASS" if rep.passed else "SKIP" if rep.skipped else "FAIL"
        _CRITERIA[number] = (title, status, _DETAILS.get(item.nodeid, ""))


@pytest.fixture
def detail(request):
    """Attach a one-line measurement summary to the running criterion."""
    def record(text: str) -> None:
        _DETAILS[request.node.nodeid] = text
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, status, info = _CRITERIA[number]
        line = f"criterion {number:2d} {status}: {title}"
        terminalreporter.write_line(line + (f" ({info})" if info else ""))
