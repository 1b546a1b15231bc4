import numpy as np
import pytest

from deepseqcoco.dataset import SplitConfig, make_synthetic_dataset, scan_dataset, split
from deepseqcoco.tensor import precision


@pytest.fixture
def f64():
    with precision("float64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("toy")
    make_synthetic_dataset(root, num_images=500, seed=0)
    return root


@pytest.fixture(scope="session")
def toy_split(toy_root):
    samples, classes = scan_dataset(toy_root)
    train, val = split(samples, SplitConfig(0.8, seed=0))
    return train, val, classes


@pytest.fixture(scope="session")
def small_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("small")
    make_synthetic_dataset(root, num_images=40, seed=3)
    return root


_ACCEPTANCE_LINES: list = []


@pytest.fixture
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion for the terminal summary."""
    return _ACCEPTANCE_LINES.append


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
