import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from voxdet.voxgrid import Geometry, LabelVolume, ScalarVolume  # noqa: E402

ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail) in ACCEPTANCE.items():
        tag = ok if isinstance(ok, str) else "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{tag}] {name}: {detail}")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def scalar(data, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    data = np.asarray(data)
    return ScalarVolume(Geometry(data.shape, spacing, origin), data)


def labels(data, spacing=(1.0, 1.0, 1.0), origin=(0.0, 0.0, 0.0)):
    data = np.asarray(data)
    return LabelVolume(Geometry(data.shape, spacing, origin), data)
