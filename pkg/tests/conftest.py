from __future__ import annotations

import numpy as np
import pytest

from abnormalkit.vfcore import builtin_frame, expression_frame, matrix_group_frame, so3_generators

# exp(0.1 x1) (cos x1, sin x1) rotating in the (x2, x3) plane
DAMP_A = "exp(0.1*x1)*cos(x1)"
DAMP_B = "exp(0.1*x1)*sin(x1)"


def damped_frame():
    """Engel-type frame with alpha^1 = 0.2, alpha^0 = -1.01, beta = 0; F-conjugate times k*pi."""
    return expression_frame("damped", 4, ["1", "0", "0", "0"], ["0", DAMP_A, DAMP_B, f"{DAMP_A}*x3 - {DAMP_B}*x2"])


def warped_frame():
    """The damped frame after the change of coordinates (u1, u2, u3 + u1 u2 / 2, u4 + 0.3 sin(u1) u3)."""
    u3 = "(x3 - 0.5*x1*x2)"
    x1 = ["1", "0", "0.5*x2", f"0.3*cos(x1)*{u3}"]
    x2 = ["0", DAMP_A, f"0.5*x1*{DAMP_A} + {DAMP_B}", f"0.3*sin(x1)*{DAMP_B} + {DAMP_A}*{u3} - {DAMP_B}*x2"]
    return expression_frame("warped", 4, x1, x2)


def so3_plane_frame():
    """Left-invariant frame on SO(3) x R^2: X1 = (e3; 1, 0), X2 = (e1; 0, 1)."""
    return matrix_group_frame("so3-r2", so3_generators(), 2, [0, 0, 1, 1, 0], [1, 0, 0, 0, 1])


@pytest.fixture(scope="session")
def engel():
    return builtin_frame("engel-so3r")


@pytest.fixture(scope="session")
def damped():
    return damped_frame()


@pytest.fixture(scope="session")
def warped():
    return warped_frame()


@pytest.fixture(scope="session")
def so3_plane():
    return so3_plane_frame()


@pytest.fixture
def rng():
    return np.random.default_rng(20240601)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def report_line():
    def record(key: str, name: str, passed: bool, detail: str) -> None:
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {key} ({name}): {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2])):
            terminalreporter.write_line(line)
