import sys

import numpy as np
import pytest

from mcisac.core import ArrayConfig, FrameConfig
from mcisac.waveform import build_symbol_grid, uniform_power_grid


@pytest.fixture
def toy_frame():
    return FrameConfig.with_cp_fraction(16, 4, 120e3, 28e9)


@pytest.fixture
def small_setup():
    f = FrameConfig.with_cp_fraction(64, 8, 120e3, 28e9)
    arrays = ArrayConfig.half_wavelength(f.wavelength)
    X = build_symbol_grid(f, "qpsk", seed=0)
    P = uniform_power_grid(f)
    return f, arrays, X, P


def rel_err(a, b):
    return np.linalg.norm(np.asarray(a) - np.asarray(b)) / np.linalg.norm(np.asarray(b))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[1])):
        terminalreporter.write_line(line)
