from pathlib import Path

import numpy as np
import pytest

from pddspeckle.core_image import Raster, read_raster

DATA = Path(__file__).parent / "data"
CAMERA = DATA / "camera_crop.pgm"


@pytest.fixture(scope="session")
def camera() -> Raster:
    """128x128 8-bit crop of the scikit-image ``camera`` photograph."""
    return read_raster(CAMERA)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(tag: str, ok: bool, detail: str) -> bool:
    line = f"{'PASS' if ok else 'FAIL'}  {tag}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
