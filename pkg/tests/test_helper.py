import json
import math
from dataclasses import replace

import numpy as np
import pytest

from errors import ConfigurationError
from harness import MomentAccumulator, EnsembleReport, Simulator, TheoryRow
from helper import (
    format_theory_table,
    load_config,
    parse_config,
    read_data_matrix,
    read_image,
    read_peaks_csv,
    read_retrieval,
    read_spectrum,
    write_data_matrix,
    write_grid_csv,
    write_image,
    write_peaks_csv,
    write_pgm,
    write_report,
    write_retrieval,
    write_spectrum,
    write_travel_times_csv,
)
from imaging import Peak, SearchGrid, SpectrumGrid
from medium import RealizationKey
from spectral import RetrievalResult
from tests.mocks.config_mock import create_config_document, create_scene_config, write_config
from tests.mocks.scene_mock import create_gaussian_image, create_strong_params


class TestParseConfig:
    """Test scene documents"""

    def test_base_document(self, config_path):
        """Test the base document loads with derived bandwidth and windows"""
        config = load_config(config_path)
        p = config.params
        assert p.omega_o == pytest.approx(2 * math.pi)
        assert p.B == pytest.approx(0.2 * 2 * math.pi)
        assert p.N == 16
        assert config.M == 25
        assert config.seed == 7
        assert config.windows.X == pytest.approx(0.2 * p.a)
        assert config.windows.Omega == pytest.approx(p.B)
        assert config.image.shape == (9, 9)
        assert config.offsets.shape == (9, 3)
        assert len(config.reflectivity.scatterers) == 1

    def test_unknown_top_level_key(self):
        """Test unknown sections are rejected"""
        doc = create_config_document()
        doc["extras"] = {}
        with pytest.raises(ConfigurationError, match="extras"):
            parse_config(doc)

    def test_unknown_nested_key(self):
        """Test unknown keys inside a section are rejected"""
        doc = create_config_document({"physical": {"lambda": 1.0}})
        with pytest.raises(ConfigurationError, match="lambda"):
            parse_config(doc)

    def test_exclusive_bandwidth(self):
        """Test B and bandwidth_ratio cannot both be given"""
        doc = create_config_document({"physical": {"B": 1.0}})
        with pytest.raises(ConfigurationError, match="not both"):
            parse_config(doc)

    def test_explicit_windows(self):
        """Test absolute window sizes are taken as given"""
        doc = create_config_document(windows={"X": 3.0, "Omega": 0.5, "band_cutoff": 4.0})
        w = parse_config(doc).windows
        assert (w.X, w.Omega, w.band_cutoff) == (3.0, 0.5, 4.0)

    def test_incomplete_windows(self):
        """Test a window section without both sizes is rejected"""
        with pytest.raises(ConfigurationError):
            parse_config(create_config_document(windows={"X": 3.0}))

    def test_missing_physical(self):
        """Test a document without physical parameters is rejected"""
        with pytest.raises(ConfigurationError):
            parse_config(create_config_document(physical=None))

    def test_missing_image_grid(self):
        """Test the image grid is required"""
        with pytest.raises(ConfigurationError):
            parse_config(create_config_document(grids={"q": 3}))

    @pytest.mark.parametrize("grid", [{"y_par": [-1, 1], "y_perp": [-1, 1, 3]}, {"y_par": [-1, 1, 0], "y_perp": [-1, 1, 3]}])
    def test_malformed_grid(self, grid):
        """Test grids must be [lo, hi, count] with a positive count"""
        doc = create_config_document({"grids": {"image": grid}})
        with pytest.raises(ConfigurationError):
            parse_config(doc)

    def test_even_offset_grid(self):
        """Test offset grids without a zero sample are rejected"""
        doc = create_config_document({"grids": {"offsets": {"y_par": [-2, 2, 4], "y_perp": [-1, 1, 3]}}})
        with pytest.raises(ConfigurationError):
            parse_config(doc)

    def test_noise_sigma(self):
        """Test an absolute noise level goes straight into the parameters"""
        config = parse_config(create_config_document(noise={"sigma_W": 0.25}))
        assert config.params.sigma_W == 0.25
        assert config.noise_fraction == 0.0

    def test_noise_fraction(self):
        """Test a noise fraction is kept for the simulator to resolve"""
        config = parse_config(create_config_document(noise={"fraction": 0.5}))
        assert config.params.sigma_W == 0.0
        assert config.noise_fraction == 0.5

    def test_noise_exclusive_and_sign(self):
        """Test sigma_W and fraction are exclusive and fractions nonnegative"""
        with pytest.raises(ConfigurationError):
            parse_config(create_config_document(noise={"sigma_W": 0.1, "fraction": 0.1}))
        with pytest.raises(ConfigurationError):
            parse_config(create_config_document(noise={"fraction": -0.1}))

    def test_scatterer_defaults(self):
        """Test scatterers default to unit reflectivity and need both coordinates"""
        doc = create_config_document(reflectivity={"scatterers": [{"y_par": 1.0, "y_perp": -1.0}]})
        s = parse_config(doc).reflectivity.scatterers[0]
        assert (s.y_par, s.y_perp, s.rho) == (1.0, -1.0, 1.0)
        with pytest.raises(ConfigurationError):
            parse_config(create_config_document(reflectivity={"scatterers": [{"y_par": 1.0}]}))

    def test_malformed_json(self, tmp_path):
        """Test malformed JSON surfaces as a decode error"""
        path = tmp_path / "broken.json"
        path.write_text("{\"physical\": ")
        with pytest.raises(json.JSONDecodeError):
            load_config(path)

    def test_written_document_round_trip(self, tmp_path):
        """Test write_config documents load like their in-memory form"""
        doc = create_config_document({"seeds": {"seed": 11, "realization": 3}})
        config = load_config(write_config(tmp_path, doc))
        assert (config.seed, config.realization) == (11, 3)


class TestDataMatrixFiles:
    """Test raw data matrices with sidecars"""

    def test_bit_exact(self, tmp_path):
        """Test values, grids, parameters and keys survive a write and read"""
        config = create_scene_config(params=create_strong_params(N=16), M=25, seed=5)
        data = Simulator(config).data(2)
        path = write_data_matrix(tmp_path / "data", data)
        assert path.suffix == ".raw"
        loaded = read_data_matrix(tmp_path / "data")
        np.testing.assert_array_equal(loaded.values, data.values)
        np.testing.assert_array_equal(loaded.grid.omegas, data.grid.omegas)
        np.testing.assert_array_equal(loaded.geometry.x_perp, data.geometry.x_perp)
        np.testing.assert_array_equal(loaded.geometry.quadrature, data.geometry.quadrature)
        assert loaded.params == data.params
        assert loaded.medium_key == RealizationKey(5, 2)
        assert loaded.noise_key is None

    def test_sidecar(self, tmp_path):
        """Test the sidecar records dtype and shape"""
        data = Simulator(create_scene_config(M=25)).data(0)
        write_data_matrix(tmp_path / "data.raw", data)
        meta = json.loads((tmp_path / "data.json").read_text())
        assert meta["dtype"] == "complex128"
        assert meta["shape"] == [25, 17]
        assert meta["kind"] == "data_matrix"

    def test_little_endian(self, tmp_path):
        """Test raw bytes are little-endian whatever the in-memory byte order"""
        data = Simulator(create_scene_config(M=25)).data(0)
        swapped = replace(data, values=data.values.astype(">c16"))
        path = write_data_matrix(tmp_path / "data", swapped)
        assert path.read_bytes() == data.values.astype("<c16").tobytes()
        assert json.loads((tmp_path / "data.json").read_text())["byte_order"] == "little"
        np.testing.assert_array_equal(read_data_matrix(tmp_path / "data").values, data.values)

    def test_wrong_kind(self, tmp_path):
        """Test an image file is not accepted as data"""
        write_image(tmp_path / "image", create_gaussian_image(), formats=("raw",))
        with pytest.raises(ConfigurationError):
            read_data_matrix(tmp_path / "image")

    def test_truncated_raw(self, tmp_path):
        """Test a raw file shorter than the sidecar shape is rejected"""
        data = Simulator(create_scene_config(M=25)).data(0)
        path = write_data_matrix(tmp_path / "data", data)
        path.write_bytes(path.read_bytes()[:-16])
        with pytest.raises(ConfigurationError):
            read_data_matrix(tmp_path / "data")


class TestImageFiles:
    """Test images, spectra and graymaps"""

    def test_image_round_trip(self, tmp_path):
        """Test an image writes raw, csv and pgm and reads back exactly"""
        image = create_gaussian_image()
        written = write_image(tmp_path / "sar", image)
        assert sorted(p.suffix for p in written) == [".csv", ".pgm", ".raw"]
        loaded = read_image(tmp_path / "sar")
        np.testing.assert_array_equal(loaded.values, image.values)
        np.testing.assert_array_equal(loaded.y_par, image.y_par)

    def test_complex_csv_columns(self, tmp_path):
        """Test complex values get real and imaginary columns, one row per sample"""
        grid = SearchGrid.from_ranges((0, 1, 2), (0, 2, 3))
        values = np.arange(6).reshape(2, 3) * (1 + 2j)
        path = write_grid_csv(tmp_path / "v.csv", ("a", "b"), (grid.y_par, grid.y_perp), values)
        lines = path.read_text().splitlines()
        assert lines[0] == "a,b,real,imag"
        assert len(lines) == 7
        assert [float(v) for v in lines[-1].split(",")] == [1.0, 2.0, 5.0, 10.0]

    def test_pgm(self, tmp_path):
        """Test the graymap header and max scaling"""
        values = np.array([[0.0, 1.0, 2.0], [4.0, 0.0, 0.0]])
        data = write_pgm(tmp_path / "v.pgm", values).read_bytes()
        header = b"P5\n3 2\n255\n"
        assert data.startswith(header)
        assert list(data[len(header):]) == [0, 64, 128, 255, 0, 0]

    def test_pgm_of_zeros(self, tmp_path):
        """Test an all-zero image gives a black graymap"""
        data = write_pgm(tmp_path / "z.pgm", np.zeros((2, 2))).read_bytes()
        assert data.endswith(bytes(4))

    def test_spectrum_round_trip(self, tmp_path):
        """Test spectra keep their carrier"""
        spectrum = SpectrumGrid(np.linspace(-1, 1, 3), np.linspace(-2, 2, 5),
                                np.arange(15).reshape(3, 5) * 1j, (-4.0, 0.0))
        write_spectrum(tmp_path / "spectrum", spectrum)
        loaded = read_spectrum(tmp_path / "spectrum")
        np.testing.assert_array_equal(loaded.values, spectrum.values)
        assert loaded.center == (-4.0, 0.0)
        with pytest.raises(ConfigurationError):
            read_image(tmp_path / "spectrum")

    def test_retrieval_round_trip(self, tmp_path):
        """Test retrieval results keep the estimate, residuals and stopping state"""
        grid = SearchGrid.symmetric(2, 1.0, 1, 1.0)
        rho = np.arange(15, dtype=float).reshape(5, 3)
        result = RetrievalResult(grid, rho.astype(complex), rho, np.array([0.5, 0.25]), 2, False)
        write_retrieval(tmp_path / "retrieval", result)
        loaded = read_retrieval(tmp_path / "retrieval")
        np.testing.assert_array_equal(loaded.rho_est, rho)
        np.testing.assert_array_equal(loaded.residuals, result.residuals)
        assert loaded.iterations == 2 and not loaded.converged
        assert loaded.ambiguity == result.ambiguity


class TestTables:
    """Test CSV tables and reports"""

    def test_peaks_round_trip(self, tmp_path):
        """Test peaks survive a write and read"""
        peaks = [Peak(1.0, -0.5, 0.9), Peak(-2.0, 0.25, 0.4)]
        assert read_peaks_csv(write_peaks_csv(tmp_path / "peaks.csv", peaks)) == peaks

    def test_empty_peaks(self, tmp_path):
        """Test an empty peak list still writes a header"""
        path = write_peaks_csv(tmp_path / "peaks.csv", [])
        assert path.read_text().splitlines()[0] == "y_par,y_perp,value"

    def test_travel_times(self, tmp_path):
        """Test one row per ray with its index, sensor position and travel time"""
        simulator = Simulator(create_scene_config(params=create_strong_params(N=16), M=25))
        draw = simulator.sampler.draw(RealizationKey(0, 0))
        path = write_travel_times_csv(tmp_path / "tt.csv", draw, simulator.geometry)
        rows = np.loadtxt(path, delimiter=",", skiprows=1)
        assert path.read_text().splitlines()[0] == "n,x_perp,travel_time"
        assert rows.shape == (17, 3)
        np.testing.assert_array_equal(rows[:, 0], np.arange(17))
        np.testing.assert_array_equal(rows[:, 1], simulator.geometry.x_perp)
        np.testing.assert_array_equal(rows[:, 2], draw.values)

    def test_report_files(self, tmp_path):
        """Test ensemble reports write mean, variance and CV"""
        grid = SearchGrid.from_ranges((-1, 1, 3), (-1, 1, 3))
        acc = MomentAccumulator(grid.shape)
        acc.add(np.ones(grid.shape))
        acc.add(3 * np.ones(grid.shape))
        report = EnsembleReport("SAR", grid, acc.mean, acc.variance, acc.count, 0, {})
        names = sorted(p.name for p in write_report(tmp_path / "stats_sar", report))
        assert names == ["stats_sar_cv.csv", "stats_sar_mean.raw", "stats_sar_variance.raw"]
        meta = json.loads((tmp_path / "stats_sar_mean.json").read_text())
        assert meta["count"] == 2
        assert meta["peak_cv"] == pytest.approx(math.sqrt(2) / 2)

    def test_theory_table(self):
        """Test the table has a header and one aligned row per quantity"""
        table = format_theory_table([TheoryRow("SAR width range", 1.0, 1.1), TheoryRow("SAR peak CV", 0.0, 0.0)])
        lines = table.splitlines()
        assert lines[0].startswith("quantity")
        assert len(lines) == 3
        assert "1.100" in lines[1]
        assert "nan" in lines[2]
