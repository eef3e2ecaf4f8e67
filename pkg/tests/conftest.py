import os
from pathlib import Path
from typing import Dict, Generator

import pytest

from scene import (
    ApertureGeometry,
    DerivedScales,
    FrequencyGrid,
    PhysicalParams,
    Reflectivity,
    build_aperture,
    build_frequency_grid,
    derive_scales,
)
from tests.mocks.config_mock import create_config_document, write_config
from tests.mocks.scene_mock import create_params, create_reflectivity, create_strong_params


@pytest.fixture
def test_env_vars() -> Generator[Dict[str, str], None, None]:
    """Set up test environment variables"""
    original_env = os.environ.copy()

    test_vars = {
        "DEBUG": "false",
        "HCINT_WORKERS": "1",
    }

    for key, value in test_vars.items():
        os.environ[key] = value

    yield test_vars

    # Restore original environment
    os.environ.clear()
    os.environ.update(original_env)


@pytest.fixture
def params() -> PhysicalParams:
    """Homogeneous, noiseless scene with the default nondimensional parameters"""
    return create_params()


@pytest.fixture
def strong_params() -> PhysicalParams:
    """Strong random medium, omega_o * tau = 6 pi"""
    return create_strong_params()


@pytest.fixture
def scales(strong_params: PhysicalParams) -> DerivedScales:
    """Decoherence scales of the strong medium"""
    return derive_scales(strong_params)


@pytest.fixture
def geometry(params: PhysicalParams) -> ApertureGeometry:
    """Default aperture, 61 sensors over [-a/2, a/2]"""
    return build_aperture(params)


@pytest.fixture
def frequency_grid(params: PhysicalParams) -> FrequencyGrid:
    """Default frequency grid resolving B"""
    return build_frequency_grid(params)


@pytest.fixture
def single_point() -> Reflectivity:
    """One unit scatterer at the origin"""
    return create_reflectivity()


@pytest.fixture
def four_point() -> Reflectivity:
    """Four unit scatterers separated mainly in range"""
    return create_reflectivity(((-7.5, 0.0, 1.0), (-2.5, 0.8, 1.0), (2.5, -0.8, 1.0), (7.5, 0.0, 1.0)))


@pytest.fixture
def config_path(tmp_path: Path) -> Path:
    """Small scene document written to a temporary directory"""
    return write_config(tmp_path, create_config_document())
