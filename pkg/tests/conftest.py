import numpy as np
import pytest

from precipnet.data import PrecipDatabase, PrecipLabel
from precipnet.synthetic import SyntheticConfig, generate_synthetic


def make_db(n=10, n_channels=13, surface=0, source=0, seed=0, labels=None):
    """Small valid database with random tb and labels."""
    rng = np.random.default_rng(seed)
    if labels is None:
        labels = rng.choice([0, 1, 2], size=n)
    labels = np.asarray(labels)
    n = len(labels)
    rate = np.where(labels == PrecipLabel.NONE, 0.0, rng.uniform(0.1, 5.0, size=n))
    anc = np.column_stack([rng.uniform(0, 1, n), rng.uniform(0, 1, n),
                           rng.uniform(1, 60, n), rng.uniform(0, 2000, n),
                           rng.uniform(250, 305, n)])
    return PrecipDatabase(rng.uniform(100, 300, size=(n, n_channels)), anc,
                          np.full(n, surface), labels, rate,
                          rng.uniform(-90, 90, n), rng.uniform(-180, 180, n),
                          np.full(n, source))


@pytest.fixture
def small_db():
    return make_db(50)


@pytest.fixture(scope="session")
def synthetic_10k():
    return generate_synthetic(SyntheticConfig(n_records=10_000, seed=3))


ACCEPTANCE_LINES = {}


@pytest.fixture(scope="session")
def acceptance_report():
    """Record one summary line per acceptance criterion."""
    def report(number, title, ok, detail=""):
        ACCEPTANCE_LINES[number] = f"[{'PASS' if ok else 'FAIL'}] {number:2d}. {title}: {detail}"
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[number])
