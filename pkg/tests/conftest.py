import numpy as np
import pytest

from irsma.channel import FadingParams, db_to_linear, dbm_to_watts, default_geometry, sample_states

SIGMA = dbm_to_watts(-90.0)


def pytest_addoption(parser):
    parser.addoption("--run-slow", action="store_true", default=False, help="run full-scale Monte Carlo tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-scale Monte Carlo runs (enable with --run-slow)")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-slow"):
        return
    skip = pytest.mark.skip(reason="full-scale run; pass --run-slow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def sigma():
    return SIGMA


def make_batch(n_elements, count, seed=3, fading_seed=5):
    geom = default_geometry(seed)
    return sample_states(geom, FadingParams(db_to_linear(3.0), n_elements, SIGMA, seed=fading_seed), range(count))


@pytest.fixture
def batch4():
    return make_batch(4, 50)


# criterion id -> (passed, detail); printed after the run by the acceptance suite
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE, key=lambda k: (int(k.split("-")[0].rstrip("abcdef")), k)):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} criterion {key}: {detail}")
