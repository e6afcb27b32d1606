import numpy as np
import pytest

from paradjoint import (
    ADVECTION_DIFFUSION,
    BURGERS,
    Grid2D,
    LejaConfig,
    ProblemSpec,
    RKConfig,
    build_system,
    sin_product_field,
    synthesize_truth,
)


@pytest.fixture(scope="session")
def grid8():
    return Grid2D(8, 8)


@pytest.fixture(scope="session")
def grid16():
    return Grid2D(16, 16)


@pytest.fixture(scope="session")
def advdiff16():
    grid = Grid2D(16, 16)
    spec = ProblemSpec(ADVECTION_DIFFUSION, a=1.0, D=1.0, omega=1.0, T=10.0,
                       f_spatial=sin_product_field(grid))
    return build_system(grid, spec)


@pytest.fixture(scope="session")
def burgers16():
    grid = Grid2D(16, 16)
    spec = ProblemSpec(BURGERS, a=1.0, D=1.0, omega=1.0, T=1.0,
                       f_spatial=sin_product_field(grid, 2))
    return build_system(grid, spec)


@pytest.fixture(scope="session")
def burgers8():
    grid = Grid2D(8, 8)
    spec = ProblemSpec(BURGERS, a=1.0, D=1.0, omega=1.0, T=1.0,
                       f_spatial=sin_product_field(grid, 2))
    return build_system(grid, spec)


@pytest.fixture(scope="session")
def rk3():
    return RKConfig(rtol=1e-3)


@pytest.fixture(scope="session")
def leja3():
    return LejaConfig(tol=1e-3)


@pytest.fixture(scope="session")
def burgers16_truth(burgers16):
    return synthesize_truth(burgers16, burgers16.spec.f_spatial,
                            RKConfig(rtol=1e-6))


def rel_linf(got: np.ndarray, ref: np.ndarray) -> float:
    """Relative L∞ mismatch normalized by the reference's global magnitude."""
    return float(np.max(np.abs(got - ref)) / np.max(np.abs(ref)))
