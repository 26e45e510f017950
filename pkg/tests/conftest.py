import numpy as np
import pytest

import flashcards as fc

ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, name: str, passed: bool, detail: str = ""):
    status = "PASS" if passed else "FAIL"
    line = f"ACCEPTANCE {number:>2} [{name}]: {status}"
    if detail:
        line += f"  ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert passed, line


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("-", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny_config():
    return fc.AEConfig(num_blocks=4, num_filters=2)


@pytest.fixture(scope="session")
def blob_sets():
    train = fc.load_dataset("synthetic-blobs", "train", 300)
    test = fc.load_dataset("synthetic-blobs", "test", 100)
    return train, test


@pytest.fixture(scope="session")
def tiny_trained(tiny_config, blob_sets):
    """A small model trained just enough to act like a real one."""
    train, _ = blob_sets
    tr, va = fc.train_val_split(train, 0.1, seed=3)
    model = fc.build_ae(tiny_config, seed=0)
    report = fc.train_ae(
        model, tr.images, va.images,
        fc.TrainHyper(epochs=6, batch_size=64, seed=0),
    )
    return model, report


def make_batch(value: float, n: int = 2) -> np.ndarray:
    return np.full((n, 32, 32, 3), value, dtype=np.float32)
