from __future__ import annotations

import numpy as np
import pytest

from traveltomo.basis import build_basis
from traveltomo.dataprep import prepare
from traveltomo.forward import FACES, SourceLine, TravelTimeData, face_points
from traveltomo.grid import GridSpec


def analytic_data(spec: GridSpec, count: int = 101, step: float = 1.0 / 20,
                  speed_scale: float = 1.0) -> TravelTimeData:
    """Exact first-arrival times sqrt(c) |x - x0| for a homogeneous medium m = c."""
    sl = SourceLine.from_spec(spec, count)
    pts = sl.points()
    faces = {}
    for name in FACES:
        p = face_points(name, spec, step)
        d = np.linalg.norm(p[None] - pts[:, None, None, :], axis=-1)
        faces[name] = np.sqrt(speed_scale) * d
    return TravelTimeData(sl, step, spec.B, spec.rho, faces)


@pytest.fixture(scope="session")
def desk_spec():
    return GridSpec(k=10, kz=10)


@pytest.fixture(scope="session")
def hom_data(desk_spec):
    return analytic_data(desk_spec)


@pytest.fixture(scope="session")
def hom_projected(desk_spec, hom_data):
    return prepare(hom_data, desk_spec, build_basis(6, -2.0, 3.0), "simpson")


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
