import numpy as np
import pytest

from linbpi.model import ContextDistribution, FeatureMap, Instance


def values_instance(values):
    """One-context instance whose action values are exactly ``values`` (one-hot features)."""
    K = len(values)
    return Instance(FeatureMap(np.eye(K)[None]), ContextDistribution([1.0]), np.asarray(values, dtype=float))


def random_instance(rng, d, K, C, min_gap=0.05):
    """Random full-span instance with a unique best action (gap >= min_gap) in every context."""
    while True:
        phi = rng.normal(size=(C, K, d))
        theta = rng.normal(size=d)
        try:
            feats = FeatureMap(phi)
        except ValueError:
            continue
        v = np.sort(phi @ theta, axis=1)
        if np.all(v[:, -1] - v[:, -2] > min_gap):
            probs = rng.dirichlet(np.ones(C)) * 0.8 + 0.2 / C
            return Instance(feats, ContextDistribution(probs / probs.sum()), theta)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# ---------------------------------------------------------------- acceptance report

_criteria: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): test belongs to acceptance criterion n")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.skipped:
        return
    if rep.when == "call" or rep.failed:
        ok, notes = _criteria.get(marker.args[0], (True, []))
        notes = notes + [v for k, v in item.user_properties if k == "measured" and v not in notes]
        _criteria[marker.args[0]] = (ok and rep.passed, notes)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        ok, notes = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {'; '.join(notes)}")
