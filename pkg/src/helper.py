import json
import logging
import math
from dataclasses import asdict, replace
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

from errors import ConfigurationError
from forward import DataMatrix
from harness import EnsembleReport, SceneConfig, TheoryRow
from imaging import ImageGrid, Peak, SearchGrid, SpectrumGrid, TwoPointField, WindowParams
from medium import RealizationKey, TravelTimeRealization
from scene import (
    ApertureGeometry,
    FrequencyGrid,
    PhysicalParams,
    Reflectivity,
)
from spectral import ModulusTarget, RetrievalResult

logger = logging.getLogger("hcint")

PathLike = Union[str, Path]

# Raw files are always little-endian
RAW_DTYPES = {"float64": "<f8", "complex128": "<c16"}

CONFIG_SCHEMA = {
    "physical": {"c", "omega_o", "B", "bandwidth_ratio", "L", "a", "N", "sigma", "ell_c"},
    "reflectivity": {"scatterers"},
    "grids": {"q", "M", "aperture_span", "image", "centers", "offsets"},
    "windows": {"X", "X_over_a", "Omega", "Omega_over_B", "band_cutoff"},
    "noise": {"sigma_W", "fraction"},
    "seeds": {"seed", "realization"},
}


# =============================================================================
# Configuration documents
# =============================================================================

def _check_keys(section: str, doc: dict, allowed: Iterable[str]) -> None:
    if not isinstance(doc, dict):
        raise ConfigurationError(f"config section '{section}' must be an object")
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ConfigurationError(f"unknown keys in '{section}': {', '.join(unknown)}")


def _exclusive(section: str, doc: dict, first: str, second: str) -> Optional[str]:
    if first in doc and second in doc:
        raise ConfigurationError(f"'{section}' takes either {first} or {second}, not both")
    return first if first in doc else second if second in doc else None


def _grid(name: str, doc: dict) -> SearchGrid:
    _check_keys(name, doc, {"y_par", "y_perp"})
    try:
        par, perp = doc["y_par"], doc["y_perp"]
        if len(par) != 3 or len(perp) != 3 or int(par[2]) < 1 or int(perp[2]) < 1:
            raise ValueError
    except (KeyError, TypeError, ValueError):
        raise ConfigurationError(f"grid '{name}' needs y_par and y_perp as [lo, hi, count]")
    return SearchGrid.from_ranges(par, perp)


def _physical(doc: dict) -> PhysicalParams:
    _check_keys("physical", doc, CONFIG_SCHEMA["physical"])
    omega_o = float(doc.get("omega_o", 2 * math.pi))
    bandwidth = _exclusive("physical", doc, "B", "bandwidth_ratio")
    if bandwidth is None:
        raise ConfigurationError("'physical' needs B or bandwidth_ratio")
    B = float(doc["B"]) if bandwidth == "B" else float(doc["bandwidth_ratio"]) * omega_o
    try:
        L = float(doc["L"])
        return PhysicalParams(
            c=float(doc.get("c", 1.0)),
            omega_o=omega_o,
            B=B,
            L=L,
            a=float(doc["a"]),
            N=int(doc["N"]),
            sigma=float(doc.get("sigma", 0.0)),
            ell_c=float(doc.get("ell_c", L)),
        )
    except KeyError as e:
        raise ConfigurationError(f"'physical' is missing {e}")


def _windows(doc: dict, p: PhysicalParams) -> WindowParams:
    _check_keys("windows", doc, CONFIG_SCHEMA["windows"])
    x_key = _exclusive("windows", doc, "X", "X_over_a")
    o_key = _exclusive("windows", doc, "Omega", "Omega_over_B")
    if x_key is None or o_key is None:
        raise ConfigurationError("'windows' needs X (or X_over_a) and Omega (or Omega_over_B)")
    X = float(doc[x_key]) * (p.a if x_key == "X_over_a" else 1.0)
    Omega = float(doc[o_key]) * (p.B if o_key == "Omega_over_B" else 1.0)
    return WindowParams(X, Omega, float(doc.get("band_cutoff", 3.0)))


def parse_config(doc: Dict[str, Any]) -> SceneConfig:
    """Build a SceneConfig from a parsed document, rejecting unknown keys at every level."""
    _check_keys("config", doc, CONFIG_SCHEMA)
    if "physical" not in doc:
        raise ConfigurationError("config needs a 'physical' section")
    p = _physical(doc["physical"])

    refl_doc = doc.get("reflectivity", {"scatterers": []})
    _check_keys("reflectivity", refl_doc, CONFIG_SCHEMA["reflectivity"])
    points = []
    for s in refl_doc.get("scatterers", []):
        _check_keys("scatterer", s, {"y_par", "y_perp", "rho"})
        try:
            points.append((float(s["y_par"]), float(s["y_perp"]), float(s.get("rho", 1.0))))
        except KeyError as e:
            raise ConfigurationError(f"scatterer is missing {e}")
    refl = Reflectivity.from_points(points)

    grids = doc.get("grids", {})
    _check_keys("grids", grids, CONFIG_SCHEMA["grids"])
    if "image" not in grids:
        raise ConfigurationError("'grids' needs an image grid")
    centers = _grid("centers", grids["centers"]) if "centers" in grids else None
    offsets = _grid("offsets", grids["offsets"]) if "offsets" in grids else None
    if offsets is not None:
        offsets.check_offsets()

    windows = _windows(doc["windows"], p) if "windows" in doc else None

    noise = doc.get("noise", {})
    _check_keys("noise", noise, CONFIG_SCHEMA["noise"])
    noise_key = _exclusive("noise", noise, "sigma_W", "fraction")
    fraction = 0.0
    if noise_key == "sigma_W":
        p = replace(p, sigma_W=float(noise["sigma_W"]))
    elif noise_key == "fraction":
        fraction = float(noise["fraction"])
        if fraction < 0:
            raise ConfigurationError(f"noise fraction must be nonnegative, got {fraction}")

    seeds = doc.get("seeds", {})
    _check_keys("seeds", seeds, CONFIG_SCHEMA["seeds"])
    M = grids.get("M")
    return SceneConfig(
        params=p,
        reflectivity=refl,
        image=_grid("image", grids["image"]),
        centers=centers,
        offsets=offsets,
        windows=windows,
        q=float(grids.get("q", 3.0)),
        M=int(M) if M is not None else None,
        aperture_span=float(grids.get("aperture_span", 1.0)),
        noise_fraction=fraction,
        seed=int(seeds.get("seed", 0)),
        realization=int(seeds.get("realization", 0)),
    )


def load_config(path: PathLike) -> SceneConfig:
    """Read and validate a JSON scene document."""
    with open(path) as f:
        doc = json.load(f)
    logger.debug(f"Loaded config from {path}")
    return parse_config(doc)


# =============================================================================
# Raw arrays with JSON sidecars
# =============================================================================

def _stem(path: PathLike) -> Path:
    path = Path(path)
    return path.with_suffix("") if path.suffix in (".raw", ".json") else path


def _write_raw(stem: PathLike, values: np.ndarray, meta: Dict[str, Any]) -> Path:
    stem = _stem(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    values = np.ascontiguousarray(values)
    dtype = "complex128" if np.iscomplexobj(values) else "float64"
    values.astype(RAW_DTYPES[dtype]).tofile(stem.with_suffix(".raw"))
    sidecar = {"dtype": dtype, "byte_order": "little", "shape": list(values.shape), **meta}
    with open(stem.with_suffix(".json"), "w") as f:
        json.dump(sidecar, f, indent=2)
    logger.debug(f"Wrote {stem.with_suffix('.raw')} {values.shape} {dtype}")
    return stem.with_suffix(".raw")


def _read_raw(stem: PathLike):
    stem = _stem(stem)
    with open(stem.with_suffix(".json")) as f:
        meta = json.load(f)
    if meta.get("dtype") not in RAW_DTYPES:
        raise ConfigurationError(f"{stem}: unsupported dtype {meta.get('dtype')}")
    values = np.fromfile(stem.with_suffix(".raw"), dtype=RAW_DTYPES[meta["dtype"]])
    shape = tuple(meta["shape"])
    if values.size != int(np.prod(shape)):
        raise ConfigurationError(f"{stem}: raw file holds {values.size} values, sidecar says {shape}")
    return values.reshape(shape), meta


def _key(key: Optional[RealizationKey]):
    return list(key) if key is not None else None


def write_data_matrix(stem: PathLike, data: DataMatrix) -> Path:
    """Bit-exact DataMatrix dump: complex128 values, grids and parameters in the sidecar."""
    meta = {
        "kind": "data_matrix",
        "params": asdict(data.params),
        "omegas": data.grid.omegas.tolist(),
        "q": data.grid.q,
        "L": data.geometry.L,
        "x_perp": data.geometry.x_perp.tolist(),
        "apodization": data.geometry.apodization.tolist(),
        "quadrature": data.geometry.quadrature.tolist(),
        "medium_key": _key(data.medium_key),
        "noise_key": _key(data.noise_key),
    }
    return _write_raw(stem, data.values, meta)


def read_data_matrix(stem: PathLike) -> DataMatrix:
    values, meta = _read_raw(stem)
    if meta.get("kind") != "data_matrix":
        raise ConfigurationError(f"{stem} is not a data matrix")
    geometry = ApertureGeometry(meta["L"], np.array(meta["x_perp"]), np.array(meta["apodization"]),
                                np.array(meta["quadrature"]))
    grid = FrequencyGrid(np.array(meta["omegas"]), meta["q"])
    medium_key = RealizationKey(*meta["medium_key"]) if meta["medium_key"] else None
    noise_key = RealizationKey(*meta["noise_key"]) if meta["noise_key"] else None
    return DataMatrix(values, grid, geometry, PhysicalParams(**meta["params"]), medium_key, noise_key)


# =============================================================================
# Images, spectra and graymaps
# =============================================================================

def write_pgm(path: PathLike, values: np.ndarray) -> Path:
    """8-bit binary graymap (P5) of |values| scaled to the max; range runs down the rows."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    magnitude = np.abs(values)
    top = magnitude.max() if magnitude.size else 0.0
    scaled = np.zeros(magnitude.shape) if top == 0 else magnitude / top
    pixels = np.round(scaled * 255).astype(np.uint8)
    with open(path, "wb") as f:
        f.write(f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode("ascii"))
        f.write(pixels.tobytes())
    return path


def write_grid_csv(path: PathLike, axis_names: Sequence[str], axes: Sequence[np.ndarray], values: np.ndarray) -> Path:
    """Long-format CSV, one row per sample; complex values get real and imaginary columns."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    first, second = np.meshgrid(axes[0], axes[1], indexing="ij")
    columns = [first.ravel(), second.ravel()]
    header = list(axis_names)
    if np.iscomplexobj(values):
        columns += [values.real.ravel(), values.imag.ravel()]
        header += ["real", "imag"]
    else:
        columns.append(values.ravel())
        header.append("value")
    np.savetxt(path, np.column_stack(columns), delimiter=",", header=",".join(header), comments="", fmt="%.17g")
    return path


def write_image(stem: PathLike, image: ImageGrid, formats: Sequence[str] = ("raw", "csv", "pgm")) -> List[Path]:
    stem = _stem(stem)
    written = []
    if "raw" in formats:
        written.append(_write_raw(stem, image.values, {"kind": "image", "y_par": image.y_par.tolist(),
                                                       "y_perp": image.y_perp.tolist()}))
    if "csv" in formats:
        written.append(write_grid_csv(stem.with_suffix(".csv"), ("y_par", "y_perp"),
                                      (image.y_par, image.y_perp), image.values))
    if "pgm" in formats:
        written.append(write_pgm(stem.with_suffix(".pgm"), image.values))
    return written


def read_image(stem: PathLike) -> ImageGrid:
    values, meta = _read_raw(stem)
    if meta.get("kind") != "image":
        raise ConfigurationError(f"{stem} is not an image")
    return ImageGrid(SearchGrid(np.array(meta["y_par"]), np.array(meta["y_perp"])), values)


def write_two_point(stem: PathLike, field: TwoPointField) -> Path:
    """Complex128 dump indexed (c_par, c_perp, t_par, t_perp)."""
    meta = {
        "kind": "two_point",
        "centers": [field.centers.y_par.tolist(), field.centers.y_perp.tolist()],
        "offsets": [field.offsets.y_par.tolist(), field.offsets.y_perp.tolist()],
    }
    return _write_raw(stem, field.values, meta)


def write_spectrum(stem: PathLike, spectrum: SpectrumGrid) -> List[Path]:
    stem = _stem(stem)
    meta = {"kind": "spectrum", "kappa_par": spectrum.kappa_par.tolist(),
            "kappa_perp": spectrum.kappa_perp.tolist(), "center": list(spectrum.center)}
    return [
        _write_raw(stem, spectrum.values, meta),
        write_grid_csv(stem.with_suffix(".csv"), ("kappa_par", "kappa_perp"),
                       (spectrum.kappa_par, spectrum.kappa_perp), spectrum.values),
        write_pgm(stem.with_suffix(".pgm"), spectrum.values),
    ]


def read_spectrum(stem: PathLike) -> SpectrumGrid:
    values, meta = _read_raw(stem)
    if meta.get("kind") != "spectrum":
        raise ConfigurationError(f"{stem} is not a spectrum")
    return SpectrumGrid(np.array(meta["kappa_par"]), np.array(meta["kappa_perp"]), values, tuple(meta["center"]))


def write_modulus(stem: PathLike, target: ModulusTarget) -> Path:
    return write_grid_csv(_stem(stem).with_suffix(".csv"), ("kappa_par", "kappa_perp"),
                          (target.kappa_par, target.kappa_perp), target.values)


# =============================================================================
# Retrieval, peaks, travel times and reports
# =============================================================================

def write_retrieval(stem: PathLike, result: RetrievalResult) -> Path:
    meta = {
        "kind": "retrieval",
        "y_par": result.grid.y_par.tolist(),
        "y_perp": result.grid.y_perp.tolist(),
        "residuals": result.residuals.tolist(),
        "iterations": result.iterations,
        "converged": result.converged,
        "ambiguity": result.ambiguity,
    }
    return _write_raw(stem, result.rho_est, meta)


def read_retrieval(stem: PathLike) -> RetrievalResult:
    rho, meta = _read_raw(stem)
    if meta.get("kind") != "retrieval":
        raise ConfigurationError(f"{stem} is not a retrieval result")
    grid = SearchGrid(np.array(meta["y_par"]), np.array(meta["y_perp"]))
    # eta is the remodulated estimate, so it is rebuilt rather than stored
    return RetrievalResult(grid, rho.astype(complex), rho, np.array(meta["residuals"]), meta["iterations"],
                           meta["converged"], meta["ambiguity"])


def write_peaks_csv(path: PathLike, peaks: Sequence[Peak]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = np.array([tuple(pk) for pk in peaks], dtype=float).reshape(-1, 3)
    np.savetxt(path, rows, delimiter=",", header="y_par,y_perp,value", comments="", fmt="%.17g")
    return path


def read_peaks_csv(path: PathLike) -> List[Peak]:
    rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return [Peak(*map(float, row)) for row in rows]


def write_travel_times_csv(path: PathLike, realization: TravelTimeRealization, geometry: ApertureGeometry) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows = np.column_stack([np.arange(geometry.count), geometry.x_perp, realization.values])
    np.savetxt(path, rows, delimiter=",", header="n,x_perp,travel_time", comments="", fmt="%.17g")
    return path


def write_report(stem: PathLike, report: EnsembleReport) -> List[Path]:
    stem = _stem(stem)
    meta = {
        "kind": "ensemble",
        "functional": report.functional,
        "y_par": report.grid.y_par.tolist(),
        "y_perp": report.grid.y_perp.tolist(),
        "count": report.count,
        "seed": report.seed,
        "regime": report.regime,
        "peak_cv": report.peak_cv(),
    }
    return [
        _write_raw(stem.with_name(stem.name + "_mean"), report.mean, meta),
        _write_raw(stem.with_name(stem.name + "_variance"), report.variance, meta),
        write_grid_csv(stem.with_name(stem.name + "_cv.csv"), ("y_par", "y_perp"),
                       (report.grid.y_par, report.grid.y_perp), report.cv),
    ]


def format_theory_table(rows: Sequence[TheoryRow]) -> str:
    lines = [f"{'quantity':<26}{'predicted':>12}{'measured':>12}{'ratio':>9}"]
    for row in rows:
        lines.append(f"{row.quantity:<26}{row.predicted:>12.4g}{row.measured:>12.4g}{row.ratio:>9.3f}")
    return "\n".join(lines)
