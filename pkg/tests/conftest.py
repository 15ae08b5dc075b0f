from pathlib import Path

import numpy as np
import pytest

from evopunn.data import Partition, SplitDataset

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


def dataset_paths(name):
    return DATA_DIR / f"{name}.csv", DATA_DIR / f"{name}.schema.json"


def toy_split(n_train=40, n_test=20, k=3, n_classes=2, seed=0, name="toy"):
    """Small learnable problem: class given by the largest of the first features."""
    rng = np.random.default_rng(seed)

    def part(n):
        x = rng.uniform(1.0, 2.0, (n, k))
        y = np.argmax(x[:, :n_classes], axis=1)
        return Partition(x, y, n_classes)

    train, test = part(n_train), part(n_test)
    return SplitDataset(name, train, test, np.zeros(k), np.ones(k),
                        np.arange(n_train), np.arange(n_train, n_train + n_test))


@pytest.fixture
def toy():
    return toy_split()


@pytest.fixture
def toy3():
    return toy_split(k=4, n_classes=3, seed=3)


# criterion number -> list of (passed, detail); filled by test_acceptance
ACCEPTANCE: dict[int, list[tuple[bool, str]]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        parts = ACCEPTANCE[n]
        status = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        terminalreporter.write_line(f"criterion {n}: {status}  " + "; ".join(d for _, d in parts))
