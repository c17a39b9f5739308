import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

import pytest

from dgctr import kernels


@pytest.fixture(autouse=True, scope="session")
def warm_kernels():
    kernels.warmup()


@pytest.fixture
def numpy_fallback(monkeypatch):
    monkeypatch.setenv("DGCTR_NO_NUMBA", "1")
