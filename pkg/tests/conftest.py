import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo", deadline=None, max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def gaussian(shape, seed=0, zeros=0.0):
    r = np.random.default_rng(seed)
    x = r.standard_normal(shape)
    if zeros:
        x[r.random(shape) < zeros] = 0.0
    return x


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when != "call":
        return
    detail = dict(item.user_properties).get("detail", "")
    verdict = "PASS" if rep.passed else "FAIL"
    item.config._criteria = getattr(item.config, "_criteria", [])
    item.config._criteria.append((marker.args[0], verdict, detail))


def pytest_terminal_summary(terminalreporter, config):
    rows = sorted(getattr(config, "_criteria", []))
    if not rows:
        return
    terminalreporter.section("acceptance criteria")
    for n, verdict, detail in rows:
        terminalreporter.write_line(f"criterion {n}: {verdict}  {detail}")
