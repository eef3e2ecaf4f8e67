import logging
import math
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Sequence, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.integrate import trapezoid
from scipy.ndimage import maximum_filter

from errors import ConfigurationError
from forward import DataMatrix, pulse_spectrum
from scene import PhysicalParams

logger = logging.getLogger("hcint")


# =============================================================================
# Grid and result types
# =============================================================================

@dataclass(frozen=True)
class WindowParams:
    """Gaussian window stds for sensor offsets (X) and frequency offsets (Omega)."""
    X: float
    Omega: float
    band_cutoff: float = 3.0

    def __post_init__(self):
        if not (self.X > 0 and self.Omega > 0):
            raise ConfigurationError(f"window parameters must be positive, got X={self.X}, Omega={self.Omega}")
        if self.band_cutoff < 2:
            raise ConfigurationError(f"band_cutoff must be >= 2, got {self.band_cutoff}")


def _axis_spacing(axis: np.ndarray, name: str) -> float:
    if axis.size == 1:
        return 1.0
    steps = np.diff(axis)
    if steps[0] <= 0 or not np.allclose(steps, steps[0], rtol=1e-9, atol=0):
        raise ConfigurationError(f"{name} axis must be uniform and increasing")
    return float(steps[0])


@dataclass(frozen=True, eq=False)
class SearchGrid:
    """Rectangular grid of (range, cross-range) points."""
    y_par: np.ndarray
    y_perp: np.ndarray

    @classmethod
    def from_ranges(cls, par: Sequence[float], perp: Sequence[float]) -> "SearchGrid":
        """Build from [lo, hi, count] specs for each axis."""
        return cls(np.linspace(par[0], par[1], int(par[2])), np.linspace(perp[0], perp[1], int(perp[2])))

    @classmethod
    def symmetric(cls, half_count_par: int, spacing_par: float,
                  half_count_perp: int, spacing_perp: float) -> "SearchGrid":
        """Odd grid symmetric about zero, as required for offsets."""
        par = np.arange(-half_count_par, half_count_par + 1) * spacing_par
        perp = np.arange(-half_count_perp, half_count_perp + 1) * spacing_perp
        return cls(par, perp)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.y_par.size, self.y_perp.size)

    def spacing(self) -> Tuple[float, float]:
        return _axis_spacing(self.y_par, "range"), _axis_spacing(self.y_perp, "cross-range")

    def check_offsets(self) -> None:
        """Offsets must be uniform, odd in count and symmetric about 0."""
        self.spacing()
        for axis in (self.y_par, self.y_perp):
            if axis.size % 2 == 0 or not np.allclose(axis, -axis[::-1], rtol=0, atol=1e-9 * (1 + np.abs(axis).max())):
                raise ConfigurationError("offset grid must have an odd count and be symmetric about 0")


@dataclass(frozen=True, eq=False)
class ImageGrid:
    grid: SearchGrid
    values: np.ndarray

    @property
    def y_par(self) -> np.ndarray:
        return self.grid.y_par

    @property
    def y_perp(self) -> np.ndarray:
        return self.grid.y_perp


@dataclass(frozen=True, eq=False)
class TwoPointField:
    """I(c + t/2, c - t/2) indexed (c_par, c_perp, t_par, t_perp)."""
    centers: SearchGrid
    offsets: SearchGrid
    values: np.ndarray

    def diagonal(self) -> ImageGrid:
        i0, j0 = self.offsets.y_par.size // 2, self.offsets.y_perp.size // 2
        return ImageGrid(self.centers, np.clip(self.values[:, :, i0, j0].real, 0, None))


@dataclass(frozen=True, eq=False)
class SpectrumGrid:
    """Values on a wavevector grid; kappa axes are relative to the carrier `center`."""
    kappa_par: np.ndarray
    kappa_perp: np.ndarray
    values: np.ndarray
    center: Tuple[float, float] = (0.0, 0.0)


class Peak(NamedTuple):
    y_par: float
    y_perp: float
    value: float


# =============================================================================
# Backpropagation
# =============================================================================

def backprop_filter(omega, x_perp, y_par, y_perp, p: PhysicalParams):
    """
    s(omega) G^2(omega, y, x) with the paraxial distance in the phase and L in the amplitude.
    """
    k = np.asarray(omega) / p.c
    d_par = p.L - np.asarray(y_par) + (np.asarray(x_perp) - np.asarray(y_perp)) ** 2 / (2 * p.L)
    return pulse_spectrum(omega, p) * np.exp(1j * (2 * k * d_par + math.pi / 2)) / (8 * math.pi * k * p.L)


def _check_data(data: DataMatrix, p: PhysicalParams) -> None:
    if data.values.shape[1] != p.N + 1:
        logger.error(f"Data has {data.values.shape[1]} sensors but N+1 = {p.N + 1}")
        raise ConfigurationError("data matrix does not match the physical parameters")


def _weighted_data(data: DataMatrix, p: PhysicalParams) -> np.ndarray:
    """
    Data times quadrature, apodization and the y-independent part of conj(F):
    u_y(m, n) = P[m, n] exp(2 i k_m y_par) exp(-i k_m (x_n - y_perp)^2 / L).
    """
    omegas = data.grid.omegas
    k = omegas / p.c
    filt = pulse_spectrum(omegas, p) * np.exp(-1j * (2 * k * p.L + math.pi / 2)) / (8 * math.pi * k * p.L)
    rows = filt * data.grid.quadrature / (2 * math.pi)
    cols = data.geometry.apodization * data.geometry.quadrature
    return data.values * rows[:, None] * cols[None, :]


def _cross_phase(k: np.ndarray, x_perp: np.ndarray, y_perp, L: float) -> np.ndarray:
    """exp(-i k (x - y_perp)^2 / L), shape (M, N+1) for scalar y_perp or (M, N+1, P) for arrays."""
    y = np.asarray(y_perp, dtype=float)
    if y.ndim == 0:
        return np.exp(-1j * k[:, None] * (x_perp[None, :] - y) ** 2 / L)
    return np.exp(-1j * k[:, None, None] * (x_perp[None, :, None] - y[None, None, :]) ** 2 / L)


# =============================================================================
# SAR
# =============================================================================

def sar_image(data: DataMatrix, grid: SearchGrid, p: PhysicalParams) -> ImageGrid:
    """Squared magnitude of the matched-filtered data summed over frequencies and sensors."""
    _check_data(data, p)
    k = data.grid.wavenumbers(p.c)
    weighted = _weighted_data(data, p)

    cross = np.einsum("mn,mnj->mj", weighted, _cross_phase(k, data.geometry.x_perp, grid.y_perp, p.L))
    range_phase = np.exp(2j * grid.y_par[:, None] * k[None, :])
    field = range_phase @ cross
    logger.debug(f"SAR image on {grid.shape} grid")
    return ImageGrid(grid, np.abs(field) ** 2)


# =============================================================================
# Two-point CINT, CINT and HCINT
# =============================================================================

def _sensor_window(x_perp: np.ndarray, w: WindowParams) -> np.ndarray:
    dx = x_perp[:, None] - x_perp[None, :]
    window = np.exp(-dx ** 2 / (2 * w.X ** 2))
    window[np.abs(dx) > w.band_cutoff * w.X * (1 + 1e-12)] = 0.0
    return window


def two_point_cint(
    data: DataMatrix,
    centers: SearchGrid,
    offsets: SearchGrid,
    w: WindowParams,
    p: PhysicalParams,
) -> TwoPointField:
    """
    Two-point CINT on (center, offset) pairs, y = c + t/2, y' = c - t/2:

        I(y, y') = sum conj(u_y(m, n)) u_y'(m', n') Wx(x_n - x_n') Wo(w_m - w_m')

    The sum is evaluated in two stages. For each cross-range pair a banded sensor
    correlation over frequency lags is formed; the range dependence then reduces to
    matrix products because the frequency grid is uniform. Pairs beyond
    band_cutoff window stds are skipped.
    """
    _check_data(data, p)
    offsets.check_offsets()
    centers.spacing()

    grid = data.grid
    d_omega = grid.spacing
    if d_omega > min(p.B, w.Omega) / 4:
        logger.warning(f"Frequency spacing {d_omega:.4g} is coarse for min(B, Omega) = {min(p.B, w.Omega):.4g}")

    k = grid.wavenumbers(p.c)
    dk = d_omega / p.c
    band = min(int(math.floor(w.band_cutoff * w.Omega / d_omega + 1e-9)), grid.M - 1)
    lags = np.arange(-band, band + 1)
    freq_window = np.exp(-(lags * d_omega) ** 2 / (2 * w.Omega ** 2))
    sensor_window = _sensor_window(data.geometry.x_perp, w)
    logger.debug(f"Two-point CINT: frequency band {band}, sensor band "
                 f"{int(np.count_nonzero(sensor_window[0]))}, grid {centers.shape} x {offsets.shape}")

    weighted = _weighted_data(data, p)
    x_perp = data.geometry.x_perp

    # Range stage kernels
    c_par, t_par = centers.y_par, offsets.y_par
    t_kernel = np.exp(2j * t_par[:, None] * k[None, :])
    c_kernel = freq_window[None, :] * np.exp(-2j * lags[None, :] * dk * c_par[:, None])
    t_lag = np.exp(1j * lags[None, :] * dk * t_par[:, None])

    left_cache: Dict[float, np.ndarray] = {}
    right_cache: Dict[float, np.ndarray] = {}

    def left(y_perp: float) -> np.ndarray:
        key = round(y_perp, 12)
        if key not in left_cache:
            left_cache[key] = weighted * _cross_phase(k, x_perp, y_perp, p.L)
        return left_cache[key]

    def right(y_perp: float) -> np.ndarray:
        key = round(y_perp, 12)
        if key not in right_cache:
            smoothed = (weighted * _cross_phase(k, x_perp, y_perp, p.L)) @ sensor_window
            right_cache[key] = np.pad(smoothed, ((band, band), (0, 0)))
        return right_cache[key]

    # J(c, t) = sum u_y conj(u_y') W W, so I(c, t) = J(c, -t)
    J = np.empty((centers.y_par.size, centers.y_perp.size, offsets.y_par.size, offsets.y_perp.size), dtype=complex)
    for i, c_perp in enumerate(centers.y_perp):
        for j, t_perp in enumerate(offsets.y_perp):
            A = left(c_perp + t_perp / 2)
            windows = sliding_window_view(right(c_perp - t_perp / 2), 2 * band + 1, axis=0)
            corr = np.einsum("mn,mnl->ml", A, windows.conj())
            D = t_kernel @ corr
            J[:, i, :, j] = c_kernel @ (t_lag * D).T

    values = 0.5 * (J[:, :, ::-1, ::-1] + J.conj())
    return TwoPointField(centers, offsets, values)


def cint_image(data: DataMatrix, grid: SearchGrid, w: WindowParams, p: PhysicalParams) -> ImageGrid:
    """CINT as the diagonal of two-point CINT, clamped at zero."""
    field = two_point_cint(data, grid, SearchGrid(np.zeros(1), np.zeros(1)), w, p)
    return field.diagonal()


def hcint_field(two_point: TwoPointField) -> ImageGrid:
    """Trapezoid integral of the two-point field over centers, indexed by offset."""
    values = two_point.values
    d_par, d_perp = two_point.centers.spacing()
    values = trapezoid(values, dx=d_par, axis=0) if values.shape[0] > 1 else values[0]
    values = trapezoid(values, dx=d_perp, axis=0) if values.shape[0] > 1 else values[0]
    return ImageGrid(two_point.offsets, values)


def hcint_spectrum(
    hcint: ImageGrid,
    center: Tuple[float, float] = (0.0, 0.0),
    pad: int = 1,
) -> SpectrumGrid:
    """
    S(kappa) = sum_t H(t) exp(-i (center + kappa) . t) dt_par dt_perp on the grid dual to
    the offsets. With pad > 1 the offsets are zero-extended to pad*(P+1) - 1 samples.
    """
    offsets = hcint.grid
    offsets.check_offsets()
    if pad < 1:
        raise ConfigurationError(f"pad must be >= 1, got {pad}")
    dt_par, dt_perp = offsets.spacing()

    carrier = np.exp(-1j * (center[0] * offsets.y_par[:, None] + center[1] * offsets.y_perp[None, :]))
    shifted = hcint.values * carrier
    widths = [((pad - 1) * (n + 1) // 2,) * 2 for n in shifted.shape]
    padded = np.pad(shifted, widths)

    spectrum = np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(padded))) * dt_par * dt_perp
    axes = []
    for n, dt in zip(padded.shape, (dt_par, dt_perp)):
        axes.append((np.arange(n) - n // 2) * (2 * math.pi / (n * dt)) if n > 1 else np.zeros(1))
    return SpectrumGrid(axes[0], axes[1], spectrum, (float(center[0]), float(center[1])))


# =============================================================================
# Measurements
# =============================================================================

def _crossing(coords: np.ndarray, profile: np.ndarray, start: int, step: int, level: float) -> float:
    i = start
    while 0 <= i + step < profile.size:
        nxt = i + step
        if profile[nxt] < level:
            frac = (profile[i] - level) / (profile[i] - profile[nxt])
            return abs(coords[i] + frac * (coords[nxt] - coords[i]) - coords[start])
        i = nxt
    return math.nan


def measure_half_widths(image: ImageGrid, level: float = math.exp(-1), amplitude: bool = True) -> Tuple[float, float]:
    """
    Half-widths (range, cross-range) at `level` of the peak, along both axes through the peak.
    Intensity images are measured on their square root when amplitude is set.
    """
    values = np.abs(image.values)
    if amplitude:
        values = np.sqrt(values)
    i0, j0 = np.unravel_index(np.argmax(values), values.shape)
    if values[i0, j0] == 0:
        return math.nan, math.nan

    widths = []
    for coords, profile, start in ((image.y_par, values[:, j0], i0), (image.y_perp, values[i0, :], j0)):
        profile = profile / values[i0, j0]
        sides = [_crossing(coords, profile, start, s, level) for s in (-1, 1)]
        sides = [s for s in sides if not math.isnan(s)]
        if not sides:
            logger.warning("Peak does not fall to the requested level inside the grid")
        widths.append(float(np.mean(sides)) if sides else math.nan)
    return widths[0], widths[1]


def find_peaks(image: ImageGrid, threshold: float = 0.5, size: int = 3) -> List[Peak]:
    """Local maxima of |values| above threshold * max, strongest first."""
    values = np.abs(image.values)
    top = values.max() if values.size else 0.0
    if top == 0:
        return []
    local = maximum_filter(values, size=size, mode="constant", cval=-np.inf)
    mask = (values == local) & (values >= threshold * top)
    peaks = [Peak(float(image.y_par[i]), float(image.y_perp[j]), float(values[i, j]))
             for i, j in zip(*np.nonzero(mask))]
    return sorted(peaks, key=lambda pk: -pk.value)
