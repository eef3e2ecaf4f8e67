import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np
from scipy.special import erf

from scene import ApertureGeometry, DerivedScales

logger = logging.getLogger("hcint")

# Stream tags for keyed generators
MEDIUM = 0
NOISE = 1
RETRIEVAL = 2

# Below this distance C(r) is evaluated by its series
SERIES_CUTOFF = 1e-6


# =============================================================================
# Keyed random streams
# =============================================================================

class RealizationKey(NamedTuple):
    seed: int
    index: int


def keyed_generator(seed: int, index: int, stream: int) -> np.random.Generator:
    """
    Counter-based generator whose draws depend only on (seed, index, stream).
    """
    sequence = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(index), int(stream)))
    return np.random.Generator(np.random.Philox(sequence))


# =============================================================================
# Covariance and moments
# =============================================================================

def ray_covariance(r):
    """
    Normalized covariance C(r) = (1/r) int_0^r exp(-pi h^2) dh = erf(sqrt(pi) r) / (2 r).
    Accepts scalars or arrays of nonnegative distances.
    """
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0):
        raise ValueError("ray_covariance requires r >= 0")

    small = r_arr < SERIES_CUTOFF
    safe = np.where(small, 1.0, r_arr)
    out = np.where(small,
                   1 - math.pi * r_arr ** 2 / 3,
                   erf(math.sqrt(math.pi) * safe) / (2 * safe))
    return float(out) if out.ndim == 0 else out


def covariance_matrix(geom: ApertureGeometry, d: DerivedScales, ell_c: float) -> np.ndarray:
    dx = np.abs(geom.x_perp[:, None] - geom.x_perp[None, :])
    return d.tau ** 2 * ray_covariance(dx / ell_c)


def moment1(omega, d: DerivedScales):
    """E[exp(2 i omega T)] for a single ray."""
    return np.exp(-2 * np.asarray(omega) ** 2 * d.tau ** 2)


def moment2(omega1, omega2, dx, d: DerivedScales, ell_c: float):
    """E[exp(2 i omega1 T(x)) exp(-2 i omega2 T(x'))] with |x - x'| = dx."""
    omega1 = np.asarray(omega1, dtype=float)
    omega2 = np.asarray(omega2, dtype=float)
    corr = ray_covariance(np.abs(np.asarray(dx, dtype=float)) / ell_c)
    return np.exp(-2 * (omega1 - omega2) ** 2 * d.tau ** 2
                  - 4 * omega1 * omega2 * d.tau ** 2 * (1 - corr))


def moment2_gaussian(omega1, omega2, dx, d: DerivedScales):
    """Paraxial Gaussian approximation of moment2 on the decoherence scales."""
    if not d.has_decoherence:
        return np.ones(np.broadcast(np.asarray(omega1), np.asarray(dx)).shape)
    return np.exp(-np.asarray(dx) ** 2 / (2 * d.X_d ** 2)
                  - (np.asarray(omega1) - np.asarray(omega2)) ** 2 / (2 * d.Omega_d ** 2))


def moment4(omegas: Sequence[float], x_perp: Sequence[float], d: DerivedScales, ell_c: float) -> float:
    """
    E[exp(2i(omega1 T1 - omega2 T2 - omega3 T3 + omega4 T4))] for rays at x_perp[0..3].
    """
    w = np.asarray(omegas, dtype=float)
    x = np.asarray(x_perp, dtype=float)
    if w.shape != (4,) or x.shape != (4,):
        raise ValueError("moment4 takes exactly four frequencies and four positions")

    corr = ray_covariance(np.abs(x[:, None] - x[None, :]) / ell_c)
    signs = np.array([1.0, -1.0, -1.0, 1.0])
    sw = signs * w
    # Var(sum_j 2 s_j w_j T_j) / 2 = 2 tau^2 sum_jk s_j s_k w_j w_k C_jk
    exponent = -2 * d.tau ** 2 * float(sw @ corr @ sw)
    return math.exp(exponent)


# =============================================================================
# Travel-time sampling
# =============================================================================

@dataclass(frozen=True, eq=False)
class TravelTimeRealization:
    values: np.ndarray
    key: Optional[RealizationKey]


class TravelTimeSampler():
    """Draws ray travel-time vectors for one aperture, factorizing the covariance once."""

    def __init__(self, geom: ApertureGeometry, d: DerivedScales, ell_c: float):
        self.geom = geom
        self.tau = d.tau
        self.factor = None
        if d.tau == 0:
            return

        cov = covariance_matrix(geom, d, ell_c)
        try:
            eigvals, eigvecs = np.linalg.eigh(cov)
        except np.linalg.LinAlgError as e:
            logger.error(f"Travel-time covariance factorization failed: {e}")
            raise RuntimeError("travel-time covariance factorization failed") from e

        clipped = int(np.sum(eigvals < 0))
        if clipped:
            logger.debug(f"Clipped {clipped} negative covariance eigenvalues")
        self.factor = eigvecs * np.sqrt(np.clip(eigvals, 0, None))
        if not np.all(np.isfinite(self.factor)):
            logger.error("Travel-time covariance factor is not finite")
            raise RuntimeError("travel-time covariance factor is not finite")

    def draw(self, key: RealizationKey) -> TravelTimeRealization:
        if self.factor is None:
            return TravelTimeRealization(np.zeros(self.geom.count), key)
        z = keyed_generator(key.seed, key.index, MEDIUM).standard_normal(self.geom.count)
        return TravelTimeRealization(self.factor @ z, key)


def sample_travel_times(
    geom: ApertureGeometry,
    d: DerivedScales,
    ell_c: float,
    realization_key: RealizationKey,
) -> TravelTimeRealization:
    return TravelTimeSampler(geom, d, ell_c).draw(realization_key)
