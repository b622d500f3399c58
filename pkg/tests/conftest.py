import json
from pathlib import Path

import numpy as np
import pytest

from mfpmp.field import ControlPath
from mfpmp.measures import GaussianSpec, sample_initial

SCHEMA_DIR = Path(__file__).resolve().parents[1] / "src" / "mfpmp" / "schemas"


def load_schema(name):
    return json.loads((SCHEMA_DIR / name).read_text())


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def bimodal_1d():
    spec = GaussianSpec.bimodal(1)
    return spec, sample_initial(spec, 60, 3)


@pytest.fixture
def random_path(rng):
    def make(d=1, L=20, scale=1.0, with_bias=False):
        m = d * d + (d if with_bias else 0)
        return ControlPath(scale * rng.standard_normal((L, m)), 1.0 / L, d, with_bias)
    return make


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record a one-line acceptance verdict; lines are printed in the terminal summary."""
    def record(n, ok, msg):
        _CRITERIA[n] = f"[{'PASS' if ok else 'FAIL'}] criterion {n}: {msg}"
        print(_CRITERIA[n])
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        terminalreporter.write_line(_CRITERIA[n])
