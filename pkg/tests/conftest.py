import math

import numpy as np
import pytest


def brute_nearest(p, pts):
    best = math.inf
    for q in pts:
        d = math.sqrt((p[0] - q[0]) ** 2 + (p[1] - q[1]) ** 2 + (p[2] - q[2]) ** 2)
        best = min(best, d)
    return best


def brute_chamfer(a, b):
    ab = sum(brute_nearest(p, b) for p in a) / len(a)
    ba = sum(brute_nearest(q, a) for q in b) / len(b)
    return 0.5 * (ab + ba)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance verdicts, printed once at the end of the session
ACCEPTANCE: dict[int, str] = {}


def record(criterion: int, ok: bool, detail: str) -> bool:
    line = f"criterion {criterion:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[criterion] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
