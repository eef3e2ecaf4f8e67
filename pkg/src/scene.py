import logging
import math
from dataclasses import dataclass
from typing import Iterable, List, NamedTuple, Optional, Tuple

import numpy as np

from errors import ConfigurationError

logger = logging.getLogger("hcint")

# Ratio below which an asymptotic ordering "a << b" is considered satisfied
REGIME_THRESHOLD = 0.2


# =============================================================================
# Physical parameters
# =============================================================================

@dataclass(frozen=True)
class PhysicalParams:
    """
    Scene scalars. Units are SI, or nondimensional with c = 1 and lambda_o = 1.
    """
    c: float
    omega_o: float
    B: float
    L: float
    a: float
    N: int
    sigma: float = 0.0
    ell_c: float = math.inf
    sigma_W: float = 0.0

    def __post_init__(self):
        for name in ("c", "omega_o", "B", "L", "a", "ell_c"):
            value = getattr(self, name)
            if not value > 0:
                raise ConfigurationError(f"{name} must be strictly positive, got {value}")
        if int(self.N) != self.N or self.N < 1:
            raise ConfigurationError(f"N must be an integer >= 1, got {self.N}")
        if self.sigma < 0 or self.sigma_W < 0:
            raise ConfigurationError("sigma and sigma_W must be nonnegative")
        if self.sigma > 0 and math.isinf(self.ell_c):
            raise ConfigurationError("a random medium (sigma > 0) needs a finite correlation length ell_c")
        if self.B >= self.omega_o:
            raise ConfigurationError(f"bandwidth B={self.B} must be below omega_o={self.omega_o}")
        if self.a >= self.L:
            raise ConfigurationError(f"aperture a={self.a} must be smaller than range L={self.L}")

    @property
    def k_o(self) -> float:
        return self.omega_o / self.c

    @property
    def lambda_o(self) -> float:
        return 2 * math.pi * self.c / self.omega_o


@dataclass(frozen=True)
class DerivedScales:
    """Carrier and decoherence scales. X_d and Omega_d are math.inf when sigma = 0."""
    omega_o: float
    lambda_o: float
    k_o: float
    tau: float
    X_d: float
    Omega_d: float

    @property
    def omega_tau(self) -> float:
        return self.omega_o * self.tau

    @property
    def has_decoherence(self) -> bool:
        return math.isfinite(self.X_d)


def derive_scales(p: PhysicalParams) -> DerivedScales:
    """Evaluate the carrier and decoherence scales of the random travel-time model."""
    lambda_o = 2 * math.pi * p.c / p.omega_o
    k_o = p.omega_o / p.c
    if p.sigma == 0:
        return DerivedScales(p.omega_o, lambda_o, k_o, 0.0, math.inf, math.inf)

    tau = p.sigma * math.sqrt(p.ell_c * p.L) / (2 * p.c)
    X_d = (math.sqrt(3) * lambda_o * math.sqrt(p.ell_c)
           / ((2 * math.pi) ** 1.5 * p.sigma * math.sqrt(p.L)))
    return DerivedScales(p.omega_o, lambda_o, k_o, tau, X_d, 1 / (2 * tau))


def validate_regime(p: PhysicalParams, d: DerivedScales) -> List[str]:
    """
    Check the orderings the random travel-time model relies on.
    Violations are returned and logged as warnings, never raised.
    """
    warnings = []

    if p.sigma > 0:
        left = p.sigma ** 2 * p.L ** 3 / p.ell_c ** 3
        middle = d.lambda_o ** 2 / (p.sigma ** 2 * p.ell_c * p.L)
        if left > REGIME_THRESHOLD * min(middle, 1.0):
            warnings.append(
                f"sigma^2 L^3/ell_c^3 = {left:.4g} is not small against "
                f"lambda_o^2/(sigma^2 ell_c L) = {middle:.4g}"
            )
        if middle > REGIME_THRESHOLD:
            warnings.append(f"lambda_o^2/(sigma^2 ell_c L) = {middle:.4g} is not small")

    if d.omega_tau == 0 or 1 / d.omega_tau > REGIME_THRESHOLD:
        warnings.append(f"not in strong-fluctuation regime (omega_o*tau = {d.omega_tau:.4g})")

    for message in warnings:
        logger.warning(message)
    return warnings


# =============================================================================
# Reflectivity
# =============================================================================

class Scatterer(NamedTuple):
    y_par: float
    y_perp: float
    rho: float


@dataclass(frozen=True)
class Reflectivity:
    scatterers: Tuple[Scatterer, ...]

    def __post_init__(self):
        object.__setattr__(self, "scatterers", tuple(Scatterer(*map(float, s)) for s in self.scatterers))
        for s in self.scatterers:
            if s.rho < 0:
                raise ConfigurationError(f"scatterer amplitude must be nonnegative, got {s.rho}")

    @classmethod
    def from_points(cls, points: Iterable[Iterable[float]]) -> "Reflectivity":
        return cls(tuple(Scatterer(*p) for p in points))

    def canonical(self) -> Tuple[Scatterer, ...]:
        """Scatterers in sorted order, so sums over them do not depend on input order."""
        return tuple(sorted(self.scatterers))

    def support_diameter(self) -> float:
        if len(self.scatterers) < 2:
            return 0.0
        pts = np.array([(s.y_par, s.y_perp) for s in self.scatterers])
        diffs = pts[:, None, :] - pts[None, :, :]
        return float(np.sqrt((diffs ** 2).sum(axis=-1)).max())

    def check_support(self, ell_c: float) -> None:
        diameter = self.support_diameter()
        if diameter >= ell_c:
            logger.error(f"Reflectivity support diameter {diameter} is not below ell_c={ell_c}")
            raise ConfigurationError(f"support diameter {diameter} must be smaller than ell_c={ell_c}")

    def shifted(self, dy_par: float, dy_perp: float) -> "Reflectivity":
        return Reflectivity(tuple(Scatterer(s.y_par + dy_par, s.y_perp + dy_perp, s.rho)
                                  for s in self.scatterers))

    def positions(self) -> np.ndarray:
        return np.array([(s.y_par, s.y_perp) for s in self.scatterers], dtype=float).reshape(-1, 2)


# =============================================================================
# Discretization grids
# =============================================================================

@dataclass(frozen=True, eq=False)
class ApertureGeometry:
    """Sensor positions (L, x_perp_n), Gaussian apodization and trapezoid quadrature weights."""
    L: float
    x_perp: np.ndarray
    apodization: np.ndarray
    quadrature: np.ndarray

    @property
    def count(self) -> int:
        return self.x_perp.size

    @property
    def spacing(self) -> float:
        return float(self.x_perp[1] - self.x_perp[0])


def build_aperture(p: PhysicalParams, span: float = 1.0) -> ApertureGeometry:
    """
    N+1 sensors over [-span a/2, span a/2] with apodization exp(-x^2/a^2). With span = 1 the
    sensors cover the aperture itself; larger spans let the Gaussian taper off before the ends.
    """
    if span < 1:
        raise ConfigurationError(f"aperture span must be >= 1, got {span}")
    half = span * p.a / 2
    x_perp = np.linspace(-half, half, p.N + 1)
    apodization = np.exp(-x_perp ** 2 / p.a ** 2)
    quadrature = np.full(x_perp.size, 2 * half / p.N)
    quadrature[[0, -1]] *= 0.5
    logger.debug(f"Aperture: {x_perp.size} sensors spaced {2 * half / p.N:.4g}")
    return ApertureGeometry(p.L, x_perp, apodization, quadrature)


@dataclass(frozen=True, eq=False)
class FrequencyGrid:
    omegas: np.ndarray
    q: float

    @property
    def M(self) -> int:
        return self.omegas.size

    @property
    def spacing(self) -> float:
        return float(self.omegas[1] - self.omegas[0])

    @property
    def quadrature(self) -> np.ndarray:
        weights = np.full(self.M, self.spacing)
        weights[[0, -1]] *= 0.5
        return weights

    def wavenumbers(self, c: float) -> np.ndarray:
        return self.omegas / c


def build_frequency_grid(
    p: PhysicalParams,
    q: float = 3.0,
    M: Optional[int] = None,
    Omega: Optional[float] = None,
) -> FrequencyGrid:
    """
    Uniform grid over [omega_o - q B, omega_o + q B] with an odd sample count, so omega_o
    is a sample. The spacing must resolve min(B, Omega) by at least four samples.
    """
    if q < 2:
        raise ConfigurationError(f"half-width multiplier q must be >= 2, got {q}")
    if p.omega_o - q * p.B <= 0:
        raise ConfigurationError(f"grid lower edge omega_o - q*B = {p.omega_o - q * p.B} is not positive")

    resolve = min(p.B, Omega) if Omega else p.B
    if M is None:
        M = 2 * math.ceil(q * p.B / (resolve / 8)) + 1
    if M < 3 or M % 2 == 0:
        raise ConfigurationError(f"frequency count M must be odd and >= 3, got {M}")

    spacing = 2 * q * p.B / (M - 1)
    if spacing > resolve / 4 * (1 + 1e-12):
        logger.error(f"Frequency spacing {spacing:.4g} does not resolve {resolve:.4g}")
        raise ConfigurationError(
            f"M={M} gives spacing {spacing:.4g} > min(B, Omega)/4 = {resolve / 4:.4g}"
        )

    omegas = np.linspace(p.omega_o - q * p.B, p.omega_o + q * p.B, M)
    logger.debug(f"Frequency grid: M={M}, spacing={spacing:.4g}")
    return FrequencyGrid(omegas, q)
