import os
import sys
import warnings
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from bbmlab.core import c1_from_wave, phi_alpha  # noqa: E402
from bbmlab.fkpp.duhamel import solve_duhamel  # noqa: E402
from bbmlab.fkpp.fd import solve_fd  # noqa: E402
from bbmlab.fkpp.field import SolutionField, SpaceTimeGrid  # noqa: E402
from bbmlab.fkpp.wave import extract_wave, fit_bramson_offset  # noqa: E402

# Acceptance lines collected by tests/test_acceptance.py, printed in the summary.
ACCEPTANCE_LINES = {}

# Set BBMLAB_TEST_CACHE to a directory to keep solved fields between runs.
CACHE = os.environ.get("BBMLAB_TEST_CACHE")


def cached_field(name, build):
    if CACHE:
        stem = Path(CACHE) / name
        if stem.with_suffix(".csv").exists():
            return SolutionField.load(stem)
    f = build()
    if CACHE:
        Path(CACHE).mkdir(parents=True, exist_ok=True)
        f.save(Path(CACHE) / name)
    return f


def quiet_fd(grid, **kw):
    # grids with dz^2/dt below 0.1 warn; several test grids use them on purpose
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return solve_fd(grid, **kw)


@pytest.fixture(scope="session")
def field_t3():
    """FD field to t=3 with dense early slices, for branching and conditional tests."""
    return cached_field("unit_t3", lambda: quiet_fd(SpaceTimeGrid(-20.0, 20.0, 0.02, 0.01, 3.0),
                                                    store_every=0.01, ramp_stride=10))


@pytest.fixture(scope="session")
def field_t8():
    """Coarse FD field to t=8, for evaluator and audit plumbing."""
    return cached_field("unit_t8", lambda: quiet_fd(SpaceTimeGrid(-40.0, 30.0, 0.05, 0.02, 8.0),
                                                    store_every=0.5))


# ---------------------------------------------------------------------------
# long fields shared by the acceptance and long-run tests


@pytest.fixture(scope="session")
def du40():
    """Duhamel field to t=40, used for exponents, ratios and bound audits."""
    def build():
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return solve_duhamel(SpaceTimeGrid(-180.0, 100.0, 0.02, 0.005, 40.0), store_every=1.0)

    return cached_field("acc_du40", build)


def _fd40(dz, dt):
    return quiet_fd(SpaceTimeGrid(-150.0, 100.0, dz, dt, 40.0), store_every=0.5)


def _moving(dz, dt):
    return quiet_fd(SpaceTimeGrid(-40.0, 90.0, dz, dt, 400.0, window_policy="moving"), store_every=5.0)


OFFSET_TIMES = np.arange(80.0, 401.0, 5.0)


RESOLUTIONS = {"coarse": (0.02, 0.01), "fine": (0.01, 0.005)}


@pytest.fixture(scope="session")
def fd40():
    """FD fields to t=40 at two resolutions (dz, dt) and (dz/2, dt/2)."""
    return {name: cached_field(f"acc_fd40_{name}", lambda: _fd40(dz, dt))
            for name, (dz, dt) in RESOLUTIONS.items()}


@pytest.fixture(scope="session")
def moving():
    """Moving-window FD fields to t=400, slices every 5."""
    return {name: cached_field(f"acc_moving_{name}", lambda: _moving(dz, dt))
            for name, (dz, dt) in RESOLUTIONS.items()}


@pytest.fixture(scope="session")
def waves(fd40, moving):
    """Waves at t_source=40 in Bramson's frame, per resolution."""
    out = {}
    for name in RESOLUTIONS:
        fit = fit_bramson_offset(moving[name], OFFSET_TIMES)
        out[name] = extract_wave(fd40[name], 40.0).with_offset(fit.offset)
    return out


@pytest.fixture(scope="session")
def c1(waves):
    return c1_from_wave(waves["fine"])


@pytest.fixture(scope="session")
def phi_field():
    return cached_field("acc_phi", lambda: quiet_fd(SpaceTimeGrid(-70.0, 50.0, 0.02, 0.01, 15.0),
                                                    store_every=0.02, ramp_stride=10))


@pytest.fixture(scope="session")
def phi_m1(phi_field):
    return phi_alpha(-1.0, phi_field)


@pytest.fixture(scope="session")
def crit40():
    """FD field to t=40 with dense slices, for first-branch laws at long times."""
    return cached_field("acc_crit40", lambda: quiet_fd(SpaceTimeGrid(-120.0, 76.0, 0.02, 0.005, 40.0),
                                                       store_every=0.05, ramp_stride=10))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])
