import os
from pathlib import Path

import numpy as np
import pytest

from xycoord.data import DATA_DIR_ENV, MNIST_FILES


def _mnist_dir():
    d = os.environ.get(DATA_DIR_ENV)
    if not d:
        return None
    p = Path(d)
    ok = all((p / f).is_file() or (p / f"{f}.gz").is_file() for f in MNIST_FILES.values())
    return p if ok else None


@pytest.fixture(scope="session")
def mnist_dir():
    d = _mnist_dir()
    if d is None:
        pytest.skip(f"MNIST files not found; set {DATA_DIR_ENV}")
    return d


@pytest.fixture(scope="session")
def mnist(mnist_dir):
    from xycoord.data import load_mnist
    return load_mnist(mnist_dir)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def record():
    """Log one acceptance verdict line; echoed again in the terminal summary."""
    def _record(criterion: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} criterion {criterion}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
