import numpy as np
import pytest

from zfmag import fitstack
from zfmag.lineshape import ZeroFieldFeature
from zfmag.magnetostatics import GridSpec
from zfmag.synth import (DEFAULT_FEATURE, CameraModel, ClusterSpec, ScanProtocol, make_scene,
                         render_stack)

B_SCAN = ScanProtocol().b_values()


def pool16(a, factor=16):
    ny, nx = a.shape[0] // factor, a.shape[1] // factor
    return a[:ny * factor, :nx * factor].reshape(ny, factor, nx, factor).mean(axis=(1, 3))


@pytest.fixture(scope="session")
def small_grid():
    return GridSpec.centered(128, 96)


@pytest.fixture(scope="session")
def noiseless_small(small_grid):
    """0.5 A P34 scene on a small grid and its unquantised noiseless stack."""
    scene = make_scene(current=0.5, grid=small_grid, seed=3)
    stack = render_stack(scene, ScanProtocol(), CameraModel(), noiseless=True, quantize=False)
    return scene, stack


@pytest.fixture(scope="session")
def noisy_small_zero(small_grid):
    """0 A scene with bright pixels so superpixel fits are clean."""
    scene = make_scene(current=0.0, grid=small_grid, seed=4, photon_rate=3.8e7)
    stack = render_stack(scene, ScanProtocol(), CameraModel(gain=380.0), seed=11)
    return scene, stack


@pytest.fixture(scope="session")
def noisy_small_maps(noisy_small_zero):
    return fitstack.fit_all(fitstack.bin(noisy_small_zero[1], 16))


#: criterion id -> (passed, detail), filled by the acceptance tests
ACCEPTANCE: dict = {}


def record(criterion: str, passed: bool, detail: str) -> bool:
    ACCEPTANCE[criterion] = (bool(passed), detail)
    print(f"{criterion} {'PASS' if passed else 'FAIL'}: {detail}")
    return bool(passed)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[key]
        terminalreporter.write_line(f"{key} {'PASS' if passed else 'FAIL'}: {detail}")
