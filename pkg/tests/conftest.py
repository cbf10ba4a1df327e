import os
from pathlib import Path

import numpy as np
import pytest

from sltgates.tensor import precision

MNIST_DIR = Path(os.environ.get("SLT_MNIST_DIR", "/root/data/mnist"))


def mnist_available() -> bool:
    names = ("train-images-idx3-ubyte", "train-images.idx3-ubyte",
             "train-images-idx3-ubyte.gz", "train-images.idx3-ubyte.gz")
    return any((MNIST_DIR / n).exists() for n in names)


needs_mnist = pytest.mark.skipif(not mnist_available(),
                                 reason=f"MNIST not found in {MNIST_DIR} (set SLT_MNIST_DIR)")


@pytest.fixture
def f64():
    with precision("float64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def central_diff(f, x: np.ndarray, h: float = 1e-5, coords=None) -> np.ndarray:
    """Central finite differences of scalar ``f`` w.r.t. array ``x`` (modified in place, restored)."""
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    idx = range(flat.size) if coords is None else coords
    for i in idx:
        old = flat[i]
        flat[i] = old + h
        fp = f()
        flat[i] = old - h
        fm = f()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def rel_err(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-12))


# acceptance criteria report: test_acceptance records one line per criterion
ACCEPTANCE: dict = {}


def record_criterion(number: int, passed: bool, detail: str) -> str:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
