import numpy as np
import pytest

from smartskin.scenario import (ObservationGrid, SkinGeometry, SynthesisConfig,
                                make_incident_wave, slant45_coefficients)


@pytest.fixture(scope="session")
def wave():
    e_perp, e_par = slant45_coefficients()
    return make_incident_wave(20.0, 105.0, e_perp, e_par, 30e9)


@pytest.fixture(scope="session")
def small_geometry():
    return SkinGeometry(16, 16, 5e-3, 5e-3)


@pytest.fixture(scope="session")
def ground_grid():
    return ObservationGrid(64, 64, -60.0, 0.0, 60.0, 60.0)


@pytest.fixture
def config():
    return SynthesisConfig()


def random_currents(geometry, rng):
    from smartskin.radiator import SurfaceCurrentField

    shape = (2,) + geometry.shape

    def cplx():
        return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)

    return SurfaceCurrentField(geometry, cplx(), 377.0 * cplx())


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


ACCEPTANCE = {}


def record(criterion: int, passed: bool, text: str) -> str:
    line = f"[{'PASS' if passed else 'FAIL'}] criterion {criterion:2d}: {text}"
    ACCEPTANCE[criterion] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
