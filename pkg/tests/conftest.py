import time

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

settings.register_profile("v2a", deadline=None, max_examples=25, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("v2a")

torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    yield


@pytest.fixture
def out_root(tmp_path, monkeypatch):
    monkeypatch.setenv("V2A_OUTPUT_ROOT", str(tmp_path / "runs"))
    return tmp_path / "runs"


# ---------------------------------------------------------------- acceptance report

_ACCEPTANCE: dict[int, str] = {}


class _Criterion:
    def __init__(self, number, title):
        self.number, self.title, self.detail = number, title, ""

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        status = "PASS" if exc_type is None else "FAIL"
        seconds = time.perf_counter() - self.start
        note = f" [{self.detail}]" if self.detail else ""
        if exc_type is not None and exc_type is not AssertionError:
            note += f" ({exc_type.__name__}: {exc})"
        _ACCEPTANCE[self.number] = f"CRITERION {self.number:>2} {status}: {self.title} ({seconds:.1f} s){note}"
        print(_ACCEPTANCE[self.number])
        return False


@pytest.fixture
def criterion():
    return _Criterion


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[n])
