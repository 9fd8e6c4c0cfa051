import numpy as np
import pytest

from leslab.covers import build_cover

ACCEPTANCE = {}


def bump(X, Y, Z, r, center=(0.0, 0.0, 0.0)):
    s = ((X - center[0])**2 + (Y - center[1])**2 + (Z - center[2])**2) / r**2
    return np.where(s < 1, np.exp(-1 / np.maximum(1 - s, 1e-12)), 0.0)


@pytest.fixture(scope="session")
def cover_cache():
    cache = {}

    def get(kind, R):
        if (kind, R) not in cache:
            cache[(kind, R)] = build_cover(kind, R)
        return cache[(kind, R)]
    return get


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
