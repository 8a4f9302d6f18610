import numpy as np
import pytest

from mbdect.forward_model import ScanModel
from mbdect.physics import MaterialTable, Spectrum
from mbdect.projector import Geometry
from mbdect.scenario import default_model


@pytest.fixture(scope="session")
def model64():
    return default_model()


@pytest.fixture(scope="session")
def small_model():
    """Shipped tables on a 16x16 grid (fast)."""
    return default_model(Geometry(24, 24, 0.1, 16, 16, 0.1))


def mono_model(geometry, mu1=0.2, mu2=0.5, fluence=1e4, energy=60.0):
    """Single-energy scan: both spectra are one bin at ``energy``."""
    E = np.array([energy - 1.0, energy, energy + 1.0])
    spec = Spectrum("mono", E, np.array([0.0, fluence, 0.0]))
    mats = (MaterialTable("a", E, np.full(3, mu1)), MaterialTable("b", E, np.full(3, mu2)))
    return ScanModel(geometry, (spec, spec), mats)


def one_ray_geometry():
    # one pixel of 1 cm, one view at theta=0, one detector bin through its center
    return Geometry(1, 1, 1.0, 1, 1, 1.0)


ACCEPTANCE_LINES = []


def report(number, ok, detail):
    """Record and print the one-line verdict of an acceptance criterion."""
    line = f"ACCEPTANCE {number:>2} {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
