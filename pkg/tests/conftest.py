import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("repro", derandomize=True, database=None)
settings.load_profile("repro")

from hazardsieve.data import from_arrays


def tiny_dataset(rng, n=None, p=None, max_meas=4):
    """Random dataset with n <= 10 subjects on [0, 1]."""
    n = int(rng.integers(2, 11)) if n is None else n
    p = int(rng.integers(1, 3)) if p is None else p
    x = rng.uniform(0.05, 1.0, n)
    delta = rng.uniform(size=n) < 0.7
    subj, times, z = [], [], []
    for i in range(n):
        m = int(rng.integers(1, max_meas + 1))
        r = np.sort(rng.uniform(0.0, 1.0, m))
        subj.append(np.full(m, i))
        times.append(r)
        z.append(rng.normal(size=(m, p)))
    return from_arrays(x, delta, np.concatenate(subj), np.concatenate(times), np.vstack(z), tau=1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE = {}


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run long Monte Carlo checks")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="long Monte Carlo check; use --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
