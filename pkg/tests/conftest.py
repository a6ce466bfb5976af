import numpy as np
import pytest

from markerless.camera import ring_rig
from markerless.toy import stick_body

ACCEPTANCE_NAMES = {
    1: "noiseless closed loop",
    2: "noisy closed loop with occluder",
    3: "gradient vs finite differences",
    4: "GNLL sigma calibration",
    5: "robust estimator properties",
    6: "triangulation",
    7: "FPS vs brute force",
    8: "z-buffer vs ray-cast visibility",
    9: "marker protocol",
    10: "L-BFGS benchmarks",
    11: "end-to-end determinism",
}

_results: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def acceptance():
    """Record one acceptance criterion's outcome for the terminal summary."""

    def record(number: int, ok: bool, detail: str = ""):
        _results[number] = (bool(ok), detail)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in ACCEPTANCE_NAMES.items():
        if n in _results:
            ok, detail = _results[n]
            status = "PASS" if ok else "FAIL"
        else:
            status, detail = "NOT RUN", ""
        terminalreporter.write_line(f"[{status}] {n:2d}. {name}: {detail}")


@pytest.fixture(scope="session")
def toy():
    return stick_body()


@pytest.fixture(scope="session")
def rig8():
    return ring_rig(8, 3.0, 1.7, (0.0, 1.0, 0.0), image_size=(1028, 752), focal=1000.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
