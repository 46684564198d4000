import numpy as np
import pytest

from vesiflow.shapes import ShapeSpec, build_shape


def circle(n=64, radius=1.0, center=(0.0, 0.0)):
    return build_shape(ShapeSpec("circle", {"radius": radius, "center": list(center)}, n))


def ellipse(n=64, a=2.0, b=1.0, center=(0.0, 0.0)):
    return build_shape(ShapeSpec("ellipse", {"a": a, "b": b, "center": list(center)}, n))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def record_criterion(number, ok, detail):
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
