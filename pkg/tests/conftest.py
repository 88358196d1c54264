import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from fairmaml.dataset import Dataset  # noqa: E402


def random_dataset(rng, n, d, p_protected=0.5, p_pos=0.5):
    return Dataset(
        rng.normal(size=(n, d)),
        (rng.random(n) < p_pos).astype(int),
        (rng.random(n) >= p_protected).astype(int),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for line in acceptance.report_lines():
        terminalreporter.write_line(line)
