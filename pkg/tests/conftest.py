import numpy as np
import pytest

from multirotor_ftc import data
from multirotor_ftc.vehicle import VehicleConfig, build_effectiveness

ACCEPTANCE_LINES = []


def unit_vehicle(n=4, spin="PNPN", **kw):
    """Normalized airframe: r=1, kappa=tau=1/n, omega in [0, 1], unit inertia and mass."""
    params = dict(n=n, arm_length_m=1.0, kappa=1.0 / n, tau=1.0 / n, spin_sign=spin,
                  upsilon=0.0, omega_min=0.0, omega_max=1.0, inertia=[1.0, 1.0, 1.0],
                  rotor_inertia_zz=0.0, mass=1.0)
    params.update(kw)
    return VehicleConfig(**params)


def random_vehicle(rng, n=None):
    n = int(rng.integers(4, 9)) if n is None else n
    spin = rng.choice([-1.0, 1.0], size=n)
    spin[0], spin[1] = 1.0, -1.0  # keep both spin directions present
    return VehicleConfig(
        n=n, arm_length_m=rng.uniform(0.1, 0.5, n), kappa=rng.uniform(0.5, 1.5, n) * 1e-5,
        tau=rng.uniform(0.5, 1.5, n) * 2e-7, spin_sign=spin, upsilon=rng.uniform(0, 2 * np.pi),
        omega_min=rng.uniform(0, 100, n), omega_max=rng.uniform(800, 1200, n),
        inertia=rng.uniform(2e-3, 8e-3, 3), rotor_inertia_zz=3e-6, mass=rng.uniform(0.5, 2.0))


@pytest.fixture
def quad():
    return build_effectiveness(data.vehicle("quad_normalized"))


@pytest.fixture
def hexa_pnpnpn():
    return build_effectiveness(data.vehicle("hexa_pnpnpn"))


@pytest.fixture
def hexa_ppnnpn():
    return build_effectiveness(data.vehicle("hexa_ppnnpn"))


@pytest.fixture
def quad_si():
    return data.vehicle("quad_si")


@pytest.fixture
def acceptance():
    """Record one pass/fail line per criterion; the lines are repeated in the run summary."""
    def record(number, title, passed, detail):
        line = f"ACCEPTANCE {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


def pytest_addoption(parser):
    parser.addoption("--update-golden", action="store_true", default=False,
                     help="rewrite tests/golden from the current CLI output")
