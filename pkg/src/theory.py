import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from errors import ConfigurationError
from imaging import WindowParams
from scene import DerivedScales, PhysicalParams, Scatterer

logger = logging.getLogger("hcint")

MODES = ("SAR", "CINT", "HCINT")


# =============================================================================
# Effective parameters
# =============================================================================

@dataclass(frozen=True)
class EffectiveParams:
    """
    Aperture and bandwidth reduced by decoherence (a_tilde, B_tilde) and the CINT
    resolution scales (X_tilde, Omega_tilde). X and Omega are inf when no window is set.
    """
    a_tilde: float
    B_tilde: float
    X_tilde: float
    Omega_tilde: float
    X: float = math.inf
    Omega: float = math.inf
    X_d: float = math.inf
    Omega_d: float = math.inf


def _inv_sq(value: float) -> float:
    return 0.0 if math.isinf(value) else 1.0 / value ** 2


def effective_params(p: PhysicalParams, d: DerivedScales, w: Optional[WindowParams] = None) -> EffectiveParams:
    X, Omega = (w.X, w.Omega) if w is not None else (math.inf, math.inf)
    a_tilde = 1 / math.sqrt(_inv_sq(p.a) + _inv_sq(d.X_d))
    B_tilde = 1 / math.sqrt(_inv_sq(p.B) + _inv_sq(d.Omega_d))
    X_tilde = 1 / math.sqrt(_inv_sq(d.X_d) + _inv_sq(X) + _inv_sq(p.a))
    Omega_tilde = 1 / math.sqrt(_inv_sq(d.Omega_d) + _inv_sq(Omega) + _inv_sq(p.B))
    return EffectiveParams(a_tilde, B_tilde, X_tilde, Omega_tilde, X, Omega, d.X_d, d.Omega_d)


# =============================================================================
# Kernels
# =============================================================================

def _split(y):
    y = np.asarray(y, dtype=float)
    return y[..., 0], y[..., 1]


def sar_kernel(y, a_eff: float, B_eff: float, p: PhysicalParams):
    """
    Point-spread function pi a B exp[-y_perp^2/(L/(k_o a))^2 - y_par^2/(c/B)^2 - 2 i k_o y_par]
    for (range, cross-range) offsets y.
    """
    y_par, y_perp = _split(y)
    return math.pi * a_eff * B_eff * np.exp(
        -y_perp ** 2 / (p.L / (p.k_o * a_eff)) ** 2
        - y_par ** 2 / (p.c / B_eff) ** 2
        - 2j * p.k_o * y_par
    )


def cint_kernels(y, eff: EffectiveParams, p: PhysicalParams):
    """Center-variable kernel K1 (real) and offset-variable kernel K2 of the mean two-point CINT."""
    y_par, y_perp = _split(y)
    K1 = math.pi * eff.X_tilde * eff.Omega_tilde * np.exp(
        -2 * y_perp ** 2 / (p.L / (p.k_o * eff.X_tilde)) ** 2
        - 2 * y_par ** 2 / (p.c / eff.Omega_tilde) ** 2
    )
    K2 = math.pi * p.a * p.B * np.exp(
        -y_perp ** 2 / (2 * (p.L / (p.k_o * p.a)) ** 2)
        - y_par ** 2 / (2 * (p.c / p.B) ** 2)
        - 2j * p.k_o * y_par
    )
    return K1, K2


# =============================================================================
# Point-scatterer predictions
# =============================================================================

class PointMeans(NamedTuple):
    sar_mean: np.ndarray
    cint_mean: np.ndarray
    sar_cv: float
    cint_cv_order: float
    peak_reduction: float


def predicted_point_means(y, scatterer: Scatterer, eff: EffectiveParams, p: PhysicalParams) -> PointMeans:
    """
    Mean SAR and CINT profiles for one point scatterer, up to one global constant, and the
    predicted coefficients of variation.
    """
    offset = np.asarray(y, dtype=float) - np.array([scatterer.y_par, scatterer.y_perp])
    sar_mean = scatterer.rho ** 2 * np.abs(sar_kernel(offset, eff.a_tilde, eff.B_tilde, p)) ** 2
    K1, _ = cint_kernels(offset, eff, p)
    cint_mean = math.pi * p.a * p.B * scatterer.rho ** 2 * K1

    ratio_x = 0.0 if math.isinf(eff.X_d) else eff.X / eff.X_d
    ratio_o = 0.0 if math.isinf(eff.Omega_d) else eff.Omega / eff.Omega_d
    if math.isinf(ratio_x) or math.isinf(ratio_o):
        cint_cv = math.inf
    else:
        cint_cv = math.sqrt(ratio_x ** 2 + ratio_o ** 2)

    reduction = (eff.a_tilde / p.a) ** 2 * (eff.B_tilde / p.B) ** 2
    return PointMeans(sar_mean, cint_mean, 1.0, cint_cv, reduction)


class WidthPrediction(NamedTuple):
    """e^-1 amplitude half-widths as (range, cross-range) pairs."""
    sar: tuple
    mean_sar: tuple
    cint: tuple


def predicted_widths(eff: EffectiveParams, p: PhysicalParams) -> WidthPrediction:
    return WidthPrediction(
        sar=(p.c / p.B, p.L / (p.k_o * p.a)),
        mean_sar=(p.c / eff.B_tilde, p.L / (p.k_o * eff.a_tilde)),
        cint=(p.c / eff.Omega_tilde, p.L / (p.k_o * eff.X_tilde)),
    )


# =============================================================================
# Additive noise
# =============================================================================

class NoiseFloor(NamedTuple):
    """
    mean is C_W for SAR and CINT and the kappa = 0 noise peak for HCINT. radius_* are the
    e^-1 radii of the noise covariance in space (SAR, CINT) or of the noise envelope in
    kappa (HCINT). speckle_* are the nominal speckle sizes lambda_o L / a and c / B.
    """
    mean: float
    C_W: float
    radius_par: float
    radius_perp: float
    speckle_par: float
    speckle_perp: float


def noise_constant(p: PhysicalParams) -> float:
    return p.sigma_W ** 2 * p.a * p.B / (2 ** 8.5 * math.pi ** 3 * p.k_o ** 2 * p.L ** 2)


def noise_floor(p: PhysicalParams, mode: str = "SAR", area: float = 1.0) -> NoiseFloor:
    """Predicted additive-noise mean and correlation radii; area is |D| for the HCINT integral."""
    if mode not in MODES:
        logger.error(f"Unknown imaging mode {mode!r}")
        raise ConfigurationError(f"unknown imaging mode {mode!r}, expected one of {MODES}")
    C_W = noise_constant(p)
    range_res, cross_res = p.c / p.B, p.L / (p.k_o * p.a)
    speckle = (p.c / p.B, p.lambda_o * p.L / p.a)

    if mode == "HCINT":
        mean = math.sqrt(2) * math.pi * C_W * area * p.c * p.L / (p.a * p.k_o * p.B)
        return NoiseFloor(mean, C_W, 2 * p.B / p.c, math.sqrt(2) * p.a * p.k_o / p.L, *speckle)
    return NoiseFloor(C_W, C_W, range_res / math.sqrt(2), cross_res, *speckle)


def hcint_noise_envelope(kappa_par, kappa_perp, p: PhysicalParams, area: float = 1.0):
    """Mean noise contribution to the HCINT spectrum about the carrier."""
    peak = noise_floor(p, "HCINT", area).mean
    return peak * np.exp(-np.asarray(kappa_perp) ** 2 / (2 * (p.a * p.k_o / p.L) ** 2)
                         - np.asarray(kappa_par) ** 2 / (4 * (p.B / p.c) ** 2))


def noise_covariance(dy_par, dy_perp, p: PhysicalParams):
    """Normalized covariance of the SAR or CINT noise speckle between two search points."""
    return np.exp(-2 * np.asarray(dy_par) ** 2 / (p.c / p.B) ** 2
                  - np.asarray(dy_perp) ** 2 / (p.L / (p.k_o * p.a)) ** 2)
