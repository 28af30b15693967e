import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def half_space_points(rng, n, count, boundary=False, spread=(0.05, 4.0)):
    """Random points in the closed upper half-space at log-uniform radii."""
    d = rng.normal(size=(count, n))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    r = np.exp(rng.uniform(np.log(spread[0]), np.log(spread[1]), size=(count, 1)))
    X = d * r
    X[:, -1] = 0.0 if boundary else np.abs(X[:, -1])
    return X


ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


def record(number, title, passed, detail=""):
    """Store one acceptance line; also printed so -s shows it inline."""
    ACCEPTANCE[number] = (title, bool(passed), detail)
    print(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}  {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d} {'PASS' if ok else 'FAIL'}  {title}  {detail}")
