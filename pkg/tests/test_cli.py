import json

import numpy as np
import pytest

from helper import read_data_matrix, read_image, read_retrieval
from main import build_parser, main
from tests.mocks.config_mock import create_config_document, write_config


def strong_config(directory):
    """Base document in the strong medium"""
    return write_config(directory, create_config_document({"physical": {"sigma": 0.06, "ell_c": 100.0}}))


class TestParser:
    """Test the command-line surface"""

    def test_subcommands(self):
        """Test every subcommand parses with its defaults"""
        parser = build_parser()
        args = parser.parse_args(["stats", "--config", "scene.json"])
        assert args.functional == "CINT"
        assert args.realizations == 200
        args = parser.parse_args(["reproduce-figure", "3", "--quick"])
        assert args.figure == 3 and args.quick
        args = parser.parse_args(["retrieve", "--config", "s.json", "--hcint", "h", "--deflate-peak", "0.5"])
        assert args.deflate_peak == 0.5
        assert args.iterations == 1000

    def test_config_required(self):
        """Test scene subcommands need a config"""
        with pytest.raises(SystemExit):
            build_parser().parse_args(["simulate"])

    def test_unknown_figure(self):
        """Test figures outside the recipes are refused by the parser"""
        with pytest.raises(SystemExit):
            build_parser().parse_args(["reproduce-figure", "7"])


class TestSimulate:
    """Test the simulate subcommand"""

    def test_writes_data(self, config_path, tmp_path, test_env_vars):
        """Test simulate writes a raw data matrix and sidecar"""
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(config_path), "--output", str(out)]) == 0
        assert (out / "data.raw").exists()
        assert (out / "data.json").exists()
        assert not (out / "travel_times.csv").exists()
        assert read_data_matrix(out / "data").values.shape == (25, 17)

    def test_same_seed_is_bit_identical(self, tmp_path):
        """Test two runs with the same seed give byte-identical files"""
        config = strong_config(tmp_path)
        for name in ("a", "b"):
            assert main(["simulate", "--config", str(config), "--seed", "7", "--output", str(tmp_path / name)]) == 0
        assert (tmp_path / "a" / "data.raw").read_bytes() == (tmp_path / "b" / "data.raw").read_bytes()
        assert (tmp_path / "a" / "travel_times.csv").read_bytes() == (tmp_path / "b" / "travel_times.csv").read_bytes()

    def test_seed_changes_medium(self, tmp_path):
        """Test a different seed gives a different realization"""
        config = strong_config(tmp_path)
        main(["simulate", "--config", str(config), "--seed", "1", "--output", str(tmp_path / "a")])
        main(["simulate", "--config", str(config), "--seed", "2", "--output", str(tmp_path / "b")])
        assert (tmp_path / "a" / "data.raw").read_bytes() != (tmp_path / "b" / "data.raw").read_bytes()

    def test_malformed_config_exit_code(self, tmp_path):
        """Test malformed JSON exits with 2"""
        path = tmp_path / "broken.json"
        path.write_text("{")
        assert main(["simulate", "--config", str(path), "--output", str(tmp_path)]) == 2

    def test_unknown_key_exit_code(self, tmp_path):
        """Test unknown config keys exit with 2"""
        path = write_config(tmp_path, create_config_document({"grids": {"spacing": 1.0}}))
        assert main(["simulate", "--config", str(path), "--output", str(tmp_path)]) == 2

    def test_missing_config_exit_code(self, tmp_path):
        """Test a missing file exits with 1"""
        assert main(["simulate", "--config", str(tmp_path / "none.json"), "--output", str(tmp_path)]) == 1


class TestPipeline:
    """Test simulate, image and retrieve chained through files"""

    def test_image_and_retrieve(self, config_path, tmp_path):
        """Test every image kind is written and retrieval reads them back"""
        out = tmp_path / "out"
        assert main(["simulate", "--config", str(config_path), "--output", str(out)]) == 0
        assert main(["image", "--config", str(config_path), "--data", str(out / "data"),
                     "--kind", "all", "--output", str(out)]) == 0
        for name in ("sar", "cint", "two_point", "hcint"):
            assert (out / f"{name}.raw").exists()
        sar = read_image(out / "sar")
        assert sar.values.shape == (9, 9)
        assert np.unravel_index(np.argmax(sar.values), sar.values.shape) == (4, 4)

        assert main(["retrieve", "--config", str(config_path), "--hcint", str(out / "hcint"),
                     "--cint", str(out / "cint"), "--iterations", "20", "--deflate-peak", "0.2",
                     "--output", str(out)]) == 0
        for name in ("spectrum.raw", "modulus.csv", "retrieval.raw", "estimate.raw", "peaks.csv", "hcint_deflated.raw"):
            assert (out / name).exists()
        result = read_retrieval(out / "retrieval")
        assert result.iterations <= 20
        assert np.all(result.rho_est >= 0)

    def test_single_kind(self, config_path, tmp_path):
        """Test --kind sar writes only the SAR image"""
        out = tmp_path / "out"
        main(["simulate", "--config", str(config_path), "--output", str(out)])
        assert main(["image", "--config", str(config_path), "--data", str(out / "data"),
                     "--kind", "sar", "--output", str(out)]) == 0
        assert (out / "sar.pgm").exists()
        assert not (out / "cint.raw").exists()

    def test_cint_without_windows(self, tmp_path):
        """Test asking for CINT without windows is a configuration error"""
        path = write_config(tmp_path, create_config_document(windows=None))
        out = tmp_path / "out"
        main(["simulate", "--config", str(path), "--output", str(out)])
        assert main(["image", "--config", str(path), "--data", str(out / "data"),
                     "--kind", "cint", "--output", str(out)]) == 2

    def test_retrieve_missing_hcint(self, config_path, tmp_path):
        """Test a missing HCINT file exits with 1"""
        assert main(["retrieve", "--config", str(config_path), "--hcint", str(tmp_path / "none"),
                     "--output", str(tmp_path)]) == 1


class TestReports:
    """Test stats, theory-check and reproduce-figure"""

    def test_stats(self, config_path, tmp_path, capsys):
        """Test stats prints a JSON summary and writes the ensemble files"""
        assert main(["stats", "--config", str(config_path), "--functional", "SAR", "--realizations", "3",
                     "--output", str(tmp_path)]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["functional"] == "SAR"
        assert summary["count"] == 3
        assert summary["peak_cv"] == pytest.approx(0.0, abs=1e-12)
        assert (tmp_path / "stats_sar_mean.raw").exists()
        assert (tmp_path / "stats_sar_cv.csv").exists()

    def test_theory_check(self, config_path, tmp_path, capsys):
        """Test theory-check prints and writes the table"""
        assert main(["theory-check", "--config", str(config_path), "--realizations", "2",
                     "--output", str(tmp_path)]) == 0
        table = (tmp_path / "theory_check.txt").read_text()
        assert table.splitlines()[0].startswith("quantity")
        assert "SAR width range" in table
        assert "CINT peak CV (order)" in table
        assert "SAR width range" in capsys.readouterr().out

    def test_reflectivity_figure(self, tmp_path):
        """Test figure 2 writes only the reflectivity"""
        assert main(["reproduce-figure", "2", "--output", str(tmp_path)]) == 0
        assert (tmp_path / "figure2" / "reflectivity.pgm").exists()
        assert not (tmp_path / "figure2" / "sar.raw").exists()

    @pytest.mark.slow
    def test_quick_figure(self, tmp_path):
        """Test a quick figure 3 writes every stage"""
        assert main(["reproduce-figure", "3", "--quick", "--seed", "1", "--output", str(tmp_path)]) == 0
        out = tmp_path / "figure3"
        for name in ("reflectivity.raw", "sar.raw", "cint.raw", "hcint.raw", "spectrum.raw",
                     "retrieval.raw", "estimate.raw", "peaks.csv"):
            assert (out / name).exists()
