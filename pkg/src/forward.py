import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from errors import ConfigurationError, DegenerateInputError
from medium import NOISE, RealizationKey, TravelTimeRealization, keyed_generator
from scene import ApertureGeometry, FrequencyGrid, PhysicalParams, Reflectivity, build_aperture

logger = logging.getLogger("hcint")


@dataclass(frozen=True, eq=False)
class DataMatrix:
    """
    Frequency-domain responses R(omega_m, x_n), shape M x (N+1), with provenance keys.
    """
    values: np.ndarray
    grid: FrequencyGrid
    geometry: ApertureGeometry
    params: PhysicalParams
    medium_key: Optional[RealizationKey] = None
    noise_key: Optional[RealizationKey] = None

    def __post_init__(self):
        expected = (self.grid.M, self.geometry.count)
        if self.values.shape != expected:
            raise ConfigurationError(f"data shape {self.values.shape} does not match grids {expected}")


# =============================================================================
# Pulse and Green's functions
# =============================================================================

def pulse_spectrum(omega, p: PhysicalParams):
    """Gaussian pulse envelope, 1 at omega_o."""
    return np.exp(-(np.asarray(omega) - p.omega_o) ** 2 / (2 * p.B ** 2))


def green_homogeneous(omega, x, y, p: PhysicalParams):
    """
    Far-field 2-D Green's function exp(i k r + i pi/4) / (2^{3/2} sqrt(pi k r)).
    Points are (range, cross-range) pairs and broadcast against omega.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    r = np.hypot(x[..., 0] - y[..., 0], x[..., 1] - y[..., 1])
    if np.any(r == 0):
        raise DegenerateInputError("Green's function is singular at zero distance")
    k = np.asarray(omega) / p.c
    return np.exp(1j * (k * r + math.pi / 4)) / (2 ** 1.5 * np.sqrt(math.pi * k * r))


def green_random(omega, x, y, travel_time, p: PhysicalParams):
    """Homogeneous Green's function delayed by the ray travel-time fluctuation."""
    return green_homogeneous(omega, x, y, p) * np.exp(1j * np.asarray(omega) * travel_time)


# =============================================================================
# Data synthesis
# =============================================================================

def noise_sigma_for_fraction(fraction: float, clean: np.ndarray, grid: FrequencyGrid) -> float:
    """
    sigma_W giving a per-entry noise std of fraction * max|clean| under the
    sigma_W^2 / d_omega sample variance convention.
    """
    if fraction < 0:
        raise ConfigurationError(f"noise fraction must be nonnegative, got {fraction}")
    return float(fraction * np.abs(clean).max() * math.sqrt(grid.spacing))


def noise_matrix(sigma_W: float, grid: FrequencyGrid, count: int, key: RealizationKey) -> np.ndarray:
    """Independent circular complex Gaussian entries with variance sigma_W^2 / d_omega."""
    std = sigma_W / math.sqrt(grid.spacing)
    gen = keyed_generator(key.seed, key.index, NOISE)
    draws = gen.standard_normal((2, grid.M, count))
    return (draws[0] + 1j * draws[1]) * (std / math.sqrt(2))


def synthesize_data(
    p: PhysicalParams,
    refl: Reflectivity,
    grid: FrequencyGrid,
    travel_times: Optional[TravelTimeRealization] = None,
    noise_key: Optional[RealizationKey] = None,
    geometry: Optional[ApertureGeometry] = None,
) -> DataMatrix:
    """
    R = s(omega) k^2 sum_j rho_j G^2(omega, y_j, x_n) exp(2 i omega T_n) + W,
    with exact distances and the squared Green's function written out in closed form.
    """
    geometry = geometry or build_aperture(p)
    if geometry.count != p.N + 1:
        raise ConfigurationError(f"aperture has {geometry.count} sensors, expected {p.N + 1}")
    if travel_times is not None and travel_times.values.shape != (geometry.count,):
        raise ConfigurationError(
            f"travel-time realization has {travel_times.values.size} rays, expected {geometry.count}"
        )
    refl.check_support(p.ell_c)

    k = grid.wavenumbers(p.c)[:, None]
    values = np.zeros((grid.M, geometry.count), dtype=complex)
    for s in refl.canonical():
        r = np.hypot(geometry.L - s.y_par, geometry.x_perp - s.y_perp)[None, :]
        # G^2 = exp(2ikr + i pi/2) / (8 pi k r)
        values += s.rho * np.exp(1j * (2 * k * r + math.pi / 2)) / (8 * math.pi * k * r)
    values *= pulse_spectrum(grid.omegas, p)[:, None] * k ** 2

    medium_key = None
    if travel_times is not None:
        values *= np.exp(2j * grid.omegas[:, None] * travel_times.values[None, :])
        medium_key = travel_times.key

    if p.sigma_W > 0:
        if noise_key is None:
            raise ConfigurationError("sigma_W > 0 requires a noise realization key")
        values = values + noise_matrix(p.sigma_W, grid, geometry.count, noise_key)
    else:
        noise_key = None

    logger.debug(f"Synthesized data {values.shape} from {len(refl.scatterers)} scatterers")
    return DataMatrix(values, grid, geometry, p, medium_key, noise_key)
