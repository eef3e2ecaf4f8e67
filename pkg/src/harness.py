import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from errors import ConfigurationError
from forward import DataMatrix, noise_sigma_for_fraction, synthesize_data
from imaging import (
    ImageGrid,
    SearchGrid,
    SpectrumGrid,
    WindowParams,
    cint_image,
    find_peaks,
    hcint_field,
    hcint_spectrum,
    measure_half_widths,
    sar_image,
    two_point_cint,
)
from medium import RealizationKey, TravelTimeSampler
from scene import (
    FrequencyGrid,
    PhysicalParams,
    Reflectivity,
    build_aperture,
    build_frequency_grid,
    derive_scales,
    validate_regime,
)
from spectral import (
    ModulusTarget,
    PeakMatch,
    RetrievalResult,
    amplitude_spread,
    deflate_central_peak,
    error_reduction_retrieve,
    match_peak_sets,
    modulus_estimate,
    register_to_cint,
)
from theory import effective_params, predicted_point_means, predicted_widths

logger = logging.getLogger("hcint")

FUNCTIONALS = ("SAR", "CINT", "HCINT")

# Realizations per accumulation chunk. Fixed so results do not depend on the worker count.
CHUNK_SIZE = 4

# Pixels whose mean is below this share of the peak mean get no coefficient of variation
CV_THRESHOLD = 1e-3

# The offset window spans the autocorrelation of the scene, so no extra zero padding
SPECTRUM_PAD = 1

# Random starts kept to the lowest residual, and Gaussian taper of the modulus as a share of the band
RETRIEVAL_STARTS = 16
RETRIEVAL_TAPER = 0.5


# =============================================================================
# Scene configuration and simulation
# =============================================================================

@dataclass(frozen=True, eq=False)
class SceneConfig:
    params: PhysicalParams
    reflectivity: Reflectivity
    image: SearchGrid
    centers: Optional[SearchGrid] = None
    offsets: Optional[SearchGrid] = None
    windows: Optional[WindowParams] = None
    q: float = 3.0
    M: Optional[int] = None
    aperture_span: float = 1.0
    noise_fraction: float = 0.0
    seed: int = 0
    realization: int = 0

    def frequency_grid(self) -> FrequencyGrid:
        omega = self.windows.Omega if self.windows is not None else None
        return build_frequency_grid(self.params, self.q, self.M, omega)

    def with_seed(self, seed: int) -> "SceneConfig":
        return replace(self, seed=int(seed))

    def require_windows(self) -> WindowParams:
        if self.windows is None:
            raise ConfigurationError("CINT needs a windows section in the configuration")
        return self.windows

    def require_two_point(self) -> Tuple[SearchGrid, SearchGrid]:
        if self.centers is None or self.offsets is None:
            raise ConfigurationError("two-point CINT needs centers and offsets grids")
        return self.centers, self.offsets


class Simulator():
    """Synthesizes data for one scene, reusing the aperture, grid and covariance factor."""

    def __init__(self, config: SceneConfig):
        self.config = config
        self.grid = config.frequency_grid()
        self.geometry = build_aperture(config.params, config.aperture_span)
        self.scales = derive_scales(config.params)
        validate_regime(config.params, self.scales)
        self.sampler = TravelTimeSampler(self.geometry, self.scales, config.params.ell_c)
        self.params = self._resolve_noise(config)

    def _resolve_noise(self, config: SceneConfig) -> PhysicalParams:
        p = config.params
        if config.noise_fraction <= 0:
            return p
        # sigma_W is fixed once from the homogeneous noise-free data
        clean = synthesize_data(replace(p, sigma_W=0.0), config.reflectivity, self.grid, geometry=self.geometry)
        sigma_W = noise_sigma_for_fraction(config.noise_fraction, clean.values, self.grid)
        logger.info(f"Noise fraction {config.noise_fraction:.0%} gives sigma_W = {sigma_W:.4g}")
        return replace(p, sigma_W=sigma_W)

    def data(self, index: int) -> DataMatrix:
        key = RealizationKey(self.config.seed, index)
        travel_times = self.sampler.draw(key) if self.params.sigma > 0 else None
        noise_key = key if self.params.sigma_W > 0 else None
        return synthesize_data(self.params, self.config.reflectivity, self.grid, travel_times,
                               noise_key, self.geometry)


def evaluate_functional(name: str, data: DataMatrix, config: SceneConfig) -> ImageGrid:
    """SAR and CINT on the image grid, the complex HCINT field on the offset grid."""
    p = data.params
    if name == "SAR":
        return sar_image(data, config.image, p)
    if name == "CINT":
        return cint_image(data, config.image, config.require_windows(), p)
    if name == "HCINT":
        centers, offsets = config.require_two_point()
        return hcint_field(two_point_cint(data, centers, offsets, config.require_windows(), p))
    raise ConfigurationError(f"unknown functional {name!r}, expected one of {FUNCTIONALS}")


def reflectivity_image(refl: Reflectivity, grid: SearchGrid) -> ImageGrid:
    """Scatterer amplitudes placed on the nearest grid cells."""
    values = np.zeros(grid.shape)
    for s in refl.scatterers:
        i = int(np.argmin(np.abs(grid.y_par - s.y_par)))
        j = int(np.argmin(np.abs(grid.y_perp - s.y_perp)))
        values[i, j] += s.rho
    return ImageGrid(grid, values)


# =============================================================================
# Streaming moments and ensembles
# =============================================================================

class MomentAccumulator():
    """Single-pass mean and variance (Welford), mergeable across partial ensembles."""

    def __init__(self, shape: Tuple[int, ...]):
        self.count = 0
        self.mean = np.zeros(shape)
        self.m2 = np.zeros(shape)

    def add(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=float)
        self.count += 1
        delta = values - self.mean
        self.mean = self.mean + delta / self.count
        self.m2 = self.m2 + delta * (values - self.mean)

    def merge(self, other: "MomentAccumulator") -> "MomentAccumulator":
        merged = MomentAccumulator(self.mean.shape)
        merged.count = self.count + other.count
        if merged.count == 0:
            return merged
        delta = other.mean - self.mean
        merged.mean = self.mean + delta * (other.count / merged.count)
        merged.m2 = self.m2 + other.m2 + delta ** 2 * (self.count * other.count / merged.count)
        return merged

    @property
    def variance(self) -> np.ndarray:
        if self.count < 2:
            return np.zeros_like(self.m2)
        return np.clip(self.m2 / (self.count - 1), 0, None)


@dataclass(frozen=True, eq=False)
class EnsembleReport:
    functional: str
    grid: SearchGrid
    mean: np.ndarray
    variance: np.ndarray
    count: int
    seed: int
    regime: Dict[str, float] = field(default_factory=dict)

    @property
    def cv(self) -> np.ndarray:
        """std / mean where the mean exceeds CV_THRESHOLD of its peak, nan elsewhere."""
        top = self.mean.max() if self.mean.size else 0.0
        valid = self.mean > CV_THRESHOLD * top if top > 0 else np.zeros(self.mean.shape, dtype=bool)
        out = np.full(self.mean.shape, np.nan)
        out[valid] = np.sqrt(self.variance[valid]) / self.mean[valid]
        return out

    def peak_index(self) -> Tuple[int, int]:
        return tuple(int(i) for i in np.unravel_index(np.argmax(self.mean), self.mean.shape))

    def peak_cv(self) -> float:
        return float(self.cv[self.peak_index()])

    def mean_image(self) -> ImageGrid:
        return ImageGrid(self.grid, self.mean)


def regime_summary(config: SceneConfig) -> Dict[str, float]:
    d = derive_scales(config.params)
    w = config.windows
    return {
        "omega_tau": d.omega_tau,
        "X_over_Xd": (w.X / d.X_d) if w is not None else math.nan,
        "Omega_over_Omegad": (w.Omega / d.Omega_d) if w is not None else math.nan,
    }


def run_monte_carlo(
    config: SceneConfig,
    functional: str,
    n_realizations: int,
    workers: int = 1,
    reduce: Callable[[ImageGrid], np.ndarray] = lambda image: np.abs(image.values),
) -> EnsembleReport:
    """
    Empirical per-pixel mean and variance of an imaging functional over realizations
    (seed, 0) .. (seed, n - 1). Chunks are merged in index order, so any worker count
    gives identical results.
    """
    if functional not in FUNCTIONALS:
        raise ConfigurationError(f"unknown functional {functional!r}, expected one of {FUNCTIONALS}")
    if n_realizations < 2:
        raise ConfigurationError(f"n_realizations must be >= 2, got {n_realizations}")
    if workers < 1:
        raise ConfigurationError(f"workers must be >= 1, got {workers}")

    simulator = Simulator(config)
    grid = config.offsets if functional == "HCINT" else config.image
    if grid is None:
        raise ConfigurationError("HCINT ensembles need an offsets grid")

    def run_chunk(start: int) -> MomentAccumulator:
        acc = MomentAccumulator(grid.shape)
        for index in range(start, min(start + CHUNK_SIZE, n_realizations)):
            acc.add(reduce(evaluate_functional(functional, simulator.data(index), config)))
        return acc

    starts = list(range(0, n_realizations, CHUNK_SIZE))
    logger.info(f"Running {n_realizations} {functional} realizations on {workers} worker(s)")
    if workers == 1:
        partials = [run_chunk(s) for s in starts]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            partials = list(pool.map(run_chunk, starts))

    total = MomentAccumulator(grid.shape)
    for partial in partials:
        total = total.merge(partial)
    return EnsembleReport(functional, grid, total.mean, total.variance, total.count,
                          config.seed, regime_summary(config))


# =============================================================================
# HCINT reconstruction pipeline
# =============================================================================

@dataclass(frozen=True, eq=False)
class Reconstruction:
    hcint: ImageGrid
    spectrum: SpectrumGrid
    target: ModulusTarget
    retrieval: RetrievalResult
    estimate: ImageGrid


def reconstruct(
    hcint: ImageGrid,
    p: PhysicalParams,
    deflate: float = 0.0,
    iterations: int = 1000,
    tolerance: float = 1e-4,
    init_key: RealizationKey = RealizationKey(0, 0),
    cint: Optional[ImageGrid] = None,
    starts: int = RETRIEVAL_STARTS,
    taper: float = RETRIEVAL_TAPER,
) -> Reconstruction:
    """HCINT field -> spectrum about the carrier -> modulus -> error reduction -> estimate."""
    if deflate:
        hcint = deflate_central_peak(hcint, deflate)
    spectrum = hcint_spectrum(hcint, center=(-2 * p.k_o, 0.0), pad=SPECTRUM_PAD)
    target = modulus_estimate(spectrum, p)
    retrieval = error_reduction_retrieve(target, iterations, tolerance, init_key, starts=starts, taper=taper)
    estimate = retrieval.estimate_image()
    if cint is not None:
        estimate = register_to_cint(estimate, cint)
    return Reconstruction(hcint, spectrum, target, retrieval, estimate)


# =============================================================================
# Figure recipes
# =============================================================================

# Four identical scatterers, separated mainly in range
FOUR_POINTS = ((-7.5, 0.0, 1.0), (-2.5, 0.8, 1.0), (2.5, -0.8, 1.0), (7.5, 0.0, 1.0))


@dataclass(frozen=True)
class FigureRecipe:
    number: int
    title: str
    sigma: float
    noise_fraction: float
    # Allowed peak position error, in high-resolution cells
    tolerance: float = 1.0


RECIPES = {
    2: FigureRecipe(2, "reflectivity", 0.0, 0.0),
    3: FigureRecipe(3, "homogeneous medium, no noise", 0.0, 0.0, 1.0),
    4: FigureRecipe(4, "strong medium, 20% noise", 0.06, 0.2, 2.0),
    5: FigureRecipe(5, "strong medium, 40% noise", 0.06, 0.4, 2.0),
}


def default_params(sigma: float = 0.0) -> PhysicalParams:
    """Nondimensional scene: c = 1, lambda_o = 1, L = 100, a = 20, B = omega_o / 5, N = 60."""
    omega_o = 2 * math.pi
    return PhysicalParams(c=1.0, omega_o=omega_o, B=omega_o / 5, L=100.0, a=20.0, N=60,
                          sigma=sigma, ell_c=100.0)


def recipe_config(number: int, seed: int = 0, quick: bool = False) -> SceneConfig:
    """
    Four-point scene of a figure recipe. Offsets step by lambda_o / 2, so the 2 k_o carrier is
    constant on the retrieval grid, and the aperture spans three apodization lengths.
    """
    if number not in RECIPES:
        raise ConfigurationError(f"unknown figure {number}, expected one of {sorted(RECIPES)}")
    recipe = RECIPES[number]
    p = default_params(recipe.sigma)
    windows = WindowParams(X=p.a / 5, Omega=p.B / 5)
    offsets = SearchGrid.symmetric(36, 0.5, 16, 0.5)
    if quick:
        image = SearchGrid.from_ranges((-12, 12, 31), (-6, 6, 13))
        centers = SearchGrid.from_ranges((-12, 12, 17), (-6, 6, 9))
    else:
        image = SearchGrid.from_ranges((-20, 20, 101), (-15, 15, 76))
        centers = SearchGrid.from_ranges((-18, 18, 37), (-15, 15, 31))
    return SceneConfig(p, Reflectivity.from_points(FOUR_POINTS), image, centers, offsets, windows,
                       aperture_span=3.0, noise_fraction=recipe.noise_fraction, seed=seed)


@dataclass(frozen=True, eq=False)
class FigureOutputs:
    number: int
    config: SceneConfig
    truth: ImageGrid
    sar: Optional[ImageGrid] = None
    cint: Optional[ImageGrid] = None
    reconstruction: Optional[Reconstruction] = None
    peaks: List = field(default_factory=list)
    match: Optional[PeakMatch] = None
    spread: float = math.nan


def reproduce_figure(
    number: int,
    seed: int = 0,
    quick: bool = False,
    deflate: float = 0.0,
    iterations: int = 1000,
    tolerance: float = 1e-4,
) -> FigureOutputs:
    """
    Run a recipe end to end. The strongest peaks of the estimate, one per scatterer, are
    matched with the true positions and their amplitude spread is recorded.
    """
    config = recipe_config(number, seed, quick)
    truth = reflectivity_image(config.reflectivity, config.image)
    logger.info(f"Reproducing figure {number}: {RECIPES[number].title}")
    if number == 2:
        return FigureOutputs(number, config, truth)

    simulator = Simulator(config)
    data = simulator.data(config.realization)
    p, windows = simulator.params, config.require_windows()
    sar = sar_image(data, config.image, p)
    cint = cint_image(data, config.image, windows, p)
    centers, offsets = config.require_two_point()
    hcint = hcint_field(two_point_cint(data, centers, offsets, windows, p))

    if quick:
        iterations = min(iterations, 50)
    result = reconstruct(hcint, p, deflate, iterations, tolerance,
                         RealizationKey(seed, config.realization), cint)
    peaks = find_peaks(result.estimate, threshold=0.3)
    reference = config.reflectivity.positions()
    strongest = peaks[:len(reference)]
    cell = (p.c / p.B, p.L / (p.k_o * p.a))
    match = match_peak_sets([(pk.y_par, pk.y_perp) for pk in strongest], reference, cell,
                            RECIPES[number].tolerance)
    spread = amplitude_spread([pk.value for pk in strongest]) if strongest else math.nan
    logger.info(f"Figure {number}: {len(peaks)} peaks, matched = {match.matched}, "
                f"largest error {match.errors.max():.2f} cells, amplitude spread {spread:.2f}")
    return FigureOutputs(number, config, truth, sar, cint, result, peaks, match, spread)


# =============================================================================
# Theory check
# =============================================================================

class TheoryRow(NamedTuple):
    quantity: str
    predicted: float
    measured: float

    @property
    def ratio(self) -> float:
        return self.measured / self.predicted if self.predicted else math.nan


def theory_check(config: SceneConfig, n_realizations: int = 20, workers: int = 1) -> List[TheoryRow]:
    """Predicted versus measured widths and peak coefficients of variation for the first scatterer."""
    if not config.reflectivity.scatterers:
        raise ConfigurationError("theory check needs at least one scatterer")
    p = config.params
    eff = effective_params(p, derive_scales(p), config.windows)
    widths = predicted_widths(eff, p)
    point = predicted_point_means(np.zeros(2), config.reflectivity.scatterers[0], eff, p)

    sar = run_monte_carlo(config, "SAR", n_realizations, workers)
    rows = []
    measured = measure_half_widths(sar.mean_image())
    rows.append(TheoryRow("SAR width range", widths.mean_sar[0], measured[0]))
    rows.append(TheoryRow("SAR width cross-range", widths.mean_sar[1], measured[1]))
    rows.append(TheoryRow("SAR peak CV", point.sar_cv if p.sigma > 0 else 0.0, sar.peak_cv()))

    if config.windows is not None:
        cint = run_monte_carlo(config, "CINT", n_realizations, workers)
        measured = measure_half_widths(cint.mean_image())
        rows.append(TheoryRow("CINT width range", widths.cint[0], measured[0]))
        rows.append(TheoryRow("CINT width cross-range", widths.cint[1], measured[1]))
        rows.append(TheoryRow("CINT peak CV (order)", point.cint_cv_order, cint.peak_cv()))
        rows.append(TheoryRow("SAR peak reduction", point.peak_reduction, math.nan))

    for row in rows:
        logger.debug(f"{row.quantity}: predicted {row.predicted:.4g}, measured {row.measured:.4g}")
    return rows
