import logging
import math
from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from errors import ConfigurationError, DegenerateInputError
from imaging import ImageGrid, SearchGrid, SpectrumGrid
from medium import RETRIEVAL, RealizationKey, keyed_generator
from scene import PhysicalParams

logger = logging.getLogger("hcint")

AMBIGUITY_NOTE = "global shift and point reflection are not resolved by phase retrieval"

# Relative tolerance when comparing a spectrum carrier with -2 k_o
CARRIER_RTOL = 1e-6


# =============================================================================
# Modulus estimate
# =============================================================================

@dataclass(frozen=True, eq=False)
class ModulusTarget:
    """
    In-band estimate m(kappa) of |FT of rho modulated at 2 k_o|, normalized to unit max.
    kappa axes are relative to the carrier (-2 k_o, 0). shape is the full kappa grid the
    band was cut from, centered on the same sample; None means the band is the whole grid.
    """
    kappa_par: np.ndarray
    kappa_perp: np.ndarray
    values: np.ndarray
    band_par: float
    band_perp: float
    k_o: float
    shape: Optional[Tuple[int, int]] = None

    def __post_init__(self):
        if self.shape is not None and any(n < m for n, m in zip(self.shape, self.values.shape)):
            raise ConfigurationError(f"kappa grid {self.shape} is smaller than the band {self.values.shape}")

    @property
    def grid_shape(self) -> Tuple[int, int]:
        return tuple(self.shape) if self.shape is not None else self.values.shape

    def embedded(self, taper: float = 0.0) -> np.ndarray:
        """
        Values on the full kappa grid, zero out of band. A positive taper multiplies them by
        exp(-(kappa / band)^2 / (2 taper^2)) along each axis.
        """
        values = self.values
        if taper > 0:
            weight = np.exp(-(self.kappa_par[:, None] / self.band_par) ** 2 / (2 * taper ** 2)
                            - (self.kappa_perp[None, :] / self.band_perp) ** 2 / (2 * taper ** 2))
            values = values * weight
        full = np.zeros(self.grid_shape)
        i0 = self.grid_shape[0] // 2 - values.shape[0] // 2
        j0 = self.grid_shape[1] // 2 - values.shape[1] // 2
        full[i0:i0 + values.shape[0], j0:j0 + values.shape[1]] = values
        return full


def signal_envelope(kappa_par, kappa_perp, p: PhysicalParams):
    """Gaussian attenuation of the HCINT spectrum about the carrier."""
    band_par, band_perp = p.B / p.c, p.a * p.k_o / p.L
    return np.exp(-np.asarray(kappa_perp) ** 2 / (2 * band_perp ** 2)
                  - np.asarray(kappa_par) ** 2 / (2 * band_par ** 2))


def _band_indices(axis: np.ndarray, band: float, name: str) -> np.ndarray:
    inside = np.nonzero(np.abs(axis) <= band * (1 + 1e-9))[0]
    if axis.max(initial=-math.inf) < band * (1 - 1e-9) or inside.size < 3:
        logger.error(f"Spectrum {name} axis does not cover the band |kappa| <= {band:.4g}")
        raise ConfigurationError(f"spectrum grid does not cover the {name} band")
    return inside


def modulus_estimate(spectrum: SpectrumGrid, p: PhysicalParams) -> ModulusTarget:
    """
    m(kappa) = sqrt(max(S / envelope, 0)) on |kappa_par| <= B/c, |kappa_perp| <= a k_o/L.
    The spectrum must be taken about the carrier (-2 k_o, 0).
    """
    expected = (-2 * p.k_o, 0.0)
    if not np.allclose(spectrum.center, expected, rtol=CARRIER_RTOL, atol=CARRIER_RTOL * p.k_o):
        raise ConfigurationError(f"spectrum center {spectrum.center} is not the carrier {expected}")

    band_par, band_perp = p.B / p.c, p.a * p.k_o / p.L
    rows = _band_indices(spectrum.kappa_par, band_par, "range")
    cols = _band_indices(spectrum.kappa_perp, band_perp, "cross-range")
    kappa_par, kappa_perp = spectrum.kappa_par[rows], spectrum.kappa_perp[cols]

    values = spectrum.values[np.ix_(rows, cols)].real
    envelope = signal_envelope(kappa_par[:, None], kappa_perp[None, :], p)
    modulus = np.sqrt(np.clip(values / envelope, 0, None))
    top = modulus.max()
    if top > 0:
        modulus = modulus / top
    logger.debug(f"Modulus target on {modulus.shape} in-band samples")
    return ModulusTarget(kappa_par, kappa_perp, modulus, band_par, band_perp, p.k_o, spectrum.values.shape)


def deflate_central_peak(hcint: ImageGrid, fraction: float) -> ImageGrid:
    """Scale the zero-offset sample by (1 - fraction)."""
    if not 0 <= fraction < 1:
        raise ConfigurationError(f"deflation fraction must be in [0, 1), got {fraction}")
    hcint.grid.check_offsets()
    values = np.array(hcint.values, copy=True)
    values[values.shape[0] // 2, values.shape[1] // 2] *= 1 - fraction
    return ImageGrid(hcint.grid, values)


# =============================================================================
# Error-reduction phase retrieval
# =============================================================================

@dataclass(frozen=True, eq=False)
class RetrievalResult:
    grid: SearchGrid
    eta: np.ndarray
    rho_est: np.ndarray
    residuals: np.ndarray
    iterations: int
    converged: bool
    ambiguity: str = AMBIGUITY_NOTE

    def estimate_image(self, recenter: bool = True) -> ImageGrid:
        """
        rho_est as an image. With recenter, the periodic field is rolled so its
        circular centroid sits at the grid center.
        """
        values = self.rho_est
        if recenter and values.any():
            for axis in (0, 1):
                n = values.shape[axis]
                angles = 2 * math.pi * np.arange(n) / n
                mass = values.sum(axis=1 - axis)
                mean = np.angle(np.sum(mass * np.exp(1j * angles)))
                values = np.roll(values, n // 2 - int(round(mean * n / (2 * math.pi))) % n, axis=axis)
        return ImageGrid(self.grid, values)


def retrieval_grid(target: ModulusTarget) -> SearchGrid:
    """Spatial grid dual to the full kappa grid of the target, centered on 0."""
    axes = []
    for kappa, n in zip((target.kappa_par, target.kappa_perp), target.grid_shape):
        cell = 2 * math.pi / (n * float(kappa[1] - kappa[0]))
        axes.append((np.arange(n) - n // 2) * cell)
    return SearchGrid(axes[0], axes[1])


def _to_spectrum(field: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(field), norm="ortho"))


def _to_field(spectrum: np.ndarray) -> np.ndarray:
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(spectrum), norm="ortho"))


def _error_reduction(modulus, scale, carrier, phase, iterations, tolerance):
    G = modulus * np.exp(1j * phase)
    residuals = []
    rho = np.zeros(modulus.shape)
    converged = False
    for it in range(iterations):
        eta = _to_field(G)
        rho = np.clip((eta * carrier.conj()).real, 0, None)
        G = _to_spectrum(rho * carrier)

        magnitude = np.abs(G)
        residuals.append(float(np.linalg.norm(magnitude - modulus) / scale))
        if it % 100 == 0:
            logger.debug(f"Error reduction iteration {it}: E_F = {residuals[-1]:.3e}")
        if residuals[-1] < tolerance:
            converged = True
            break
        unit = np.where(magnitude > 0, G / np.where(magnitude > 0, magnitude, 1), 1)
        G = modulus * unit

    history = np.asarray(residuals)
    if np.any(np.diff(history) > 1e-12 * (1 + history[:-1])):
        logger.warning("Error-reduction residual increased between iterations")
    return history, rho, converged


def error_reduction_retrieve(
    target: ModulusTarget,
    iterations: int = 1000,
    tolerance: float = 1e-4,
    init_key: RealizationKey = RealizationKey(0, 0),
    initial_phase: Optional[np.ndarray] = None,
    starts: int = 1,
    taper: float = 0.0,
) -> RetrievalResult:
    """
    Alternate between the measured Fourier modulus and positivity of the demodulated field
    eta(x) exp(-2 i k_o x_par) on the grid dual to the target's full kappa grid, where the
    modulus is zero out of band. Each of `starts` runs begins from uniform random phases
    drawn in turn from init_key, unless an initial phase is given, and the run with the
    lowest final E_F = || |G| - m || / || m || is kept. A run stops at the iteration cap
    or when E_F falls below tolerance.
    """
    if iterations < 1:
        raise ConfigurationError(f"iterations must be >= 1, got {iterations}")
    if starts < 1:
        raise ConfigurationError(f"starts must be >= 1, got {starts}")
    if taper < 0:
        raise ConfigurationError(f"taper must be >= 0, got {taper}")
    modulus = target.embedded(taper)
    scale = np.linalg.norm(modulus)
    if scale == 0:
        logger.error("Modulus target is identically zero")
        raise DegenerateInputError("cannot retrieve from a zero modulus")

    grid = retrieval_grid(target)
    carrier = np.exp(2j * target.k_o * grid.y_par)[:, None]

    if initial_phase is not None:
        initial_phase = np.asarray(initial_phase, dtype=float)
        if initial_phase.shape != modulus.shape:
            raise ConfigurationError(f"initial phase shape {initial_phase.shape} is not {modulus.shape}")
        phases = [initial_phase]
    else:
        gen = keyed_generator(init_key.seed, init_key.index, RETRIEVAL)
        phases = [gen.uniform(0, 2 * math.pi, modulus.shape) for _ in range(starts)]

    best, best_start = None, 0
    for start, phase in enumerate(phases):
        run = _error_reduction(modulus, scale, carrier, phase, iterations, tolerance)
        logger.debug(f"Start {start}: E_F = {run[0][-1]:.3e} after {run[0].size} iterations")
        if best is None or run[0][-1] < best[0][-1]:
            best, best_start = run, start

    history, rho, converged = best
    logger.info(f"Error reduction kept start {best_start} of {len(phases)}: "
                f"{history.size} iterations, E_F = {history[-1]:.3e}")
    return RetrievalResult(grid, rho * carrier, rho, history, history.size, converged)


# =============================================================================
# Registration and peak matching
# =============================================================================

def support_centroid(image: ImageGrid, fraction: float = 0.5) -> Tuple[float, float]:
    """Value-weighted centroid of the samples at or above fraction * max."""
    values = np.abs(image.values)
    top = values.max() if values.size else 0.0
    if not top > 0:
        raise DegenerateInputError("image has no support above threshold")
    weights = np.where(values >= fraction * top, values, 0.0)
    total = weights.sum()
    return (float((weights.sum(axis=1) * image.y_par).sum() / total),
            float((weights.sum(axis=0) * image.y_perp).sum() / total))


def register_to_cint(estimate: ImageGrid, cint: ImageGrid, fraction: float = 0.5) -> ImageGrid:
    """
    Translate the estimate's axes so its half-maximum centroid matches that of the CINT image.
    A point reflection of the estimate is left as is.
    """
    try:
        target = support_centroid(cint, fraction)
    except DegenerateInputError:
        logger.error("CINT image has empty support, cannot register")
        raise
    current = support_centroid(estimate, fraction)
    shift = (target[0] - current[0], target[1] - current[1])
    logger.debug(f"Registering estimate by ({shift[0]:.4g}, {shift[1]:.4g})")
    return ImageGrid(SearchGrid(estimate.y_par + shift[0], estimate.y_perp + shift[1]), estimate.values)


class PeakMatch(NamedTuple):
    matched: bool
    reflected: bool
    shift: Tuple[float, float]
    errors: np.ndarray


def match_peak_sets(
    found: Sequence[Sequence[float]],
    reference: Sequence[Sequence[float]],
    cell: Tuple[float, float],
    tolerance: float = 1.0,
) -> PeakMatch:
    """
    Compare peak positions with reference positions modulo a global shift and a point reflection.
    errors holds per-reference (range, cross-range) distances in cells; unmatched references get inf.
    """
    found = np.asarray(found, dtype=float).reshape(-1, 2)
    reference = np.asarray(reference, dtype=float).reshape(-1, 2)
    scale = np.asarray(cell, dtype=float)
    if reference.shape[0] == 0:
        raise ConfigurationError("reference peak set is empty")
    if found.shape[0] == 0:
        return PeakMatch(False, False, (0.0, 0.0), np.full(reference.shape, np.inf))

    best = None
    for reflected in (False, True):
        points = -found if reflected else found
        for anchor in points:
            for ref in reference:
                shift = ref - anchor
                cost = np.linalg.norm(((points + shift)[:, None, :] - reference[None, :, :]) / scale, axis=-1)
                rows, cols = linear_sum_assignment(cost)
                shift = shift + np.mean(reference[cols] - (points[rows] + shift), axis=0)
                errors = np.full(reference.shape, np.inf)
                errors[cols] = np.abs(points[rows] + shift - reference[cols]) / scale
                score = errors.max()
                if best is None or score < best[0]:
                    best = (score, reflected, shift, errors)

    score, reflected, shift, errors = best
    matched = found.shape[0] == reference.shape[0] and score <= tolerance
    return PeakMatch(bool(matched), reflected, (float(shift[0]), float(shift[1])), errors)


def amplitude_spread(values: Sequence[float]) -> float:
    """(max - min) / max of peak amplitudes."""
    values = np.abs(np.asarray(values, dtype=float))
    if values.size == 0 or not values.max() > 0:
        raise DegenerateInputError("no positive peak amplitudes")
    return float((values.max() - values.min()) / values.max())
