import numpy as np
import pytest


def random_batch(rng, mode, B=None, M=None, C=None, grid=None):
    """Random head predictions ``(B, M, *event)`` within the documented size limits."""
    B = B or int(rng.integers(1, 17))
    M = M or int(rng.integers(2, 9))
    if mode == "classification":
        C = C or int(rng.integers(2, 11))
        logits = rng.normal(0, 2, size=(B, M, C))
        e = np.exp(logits - logits.max(-1, keepdims=True))
        return e / e.sum(-1, keepdims=True)
    h, w = grid or (int(rng.integers(1, 9)), int(rng.integers(1, 9)))
    return rng.uniform(0, 1, size=(B, M, 1, h, w))


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


def pytest_terminal_summary(terminalreporter):
    import acceptance_log

    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.LINES:
            terminalreporter.write_line(line)
