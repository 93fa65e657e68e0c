"""
Tests for the command-line front-end and its exit codes.
"""
import json

import numpy as np
import pandas as pd
import pytest

from python_afmm.cli import EXIT_IO, EXIT_NUMERIC, EXIT_OK, EXIT_USAGE, build_parser, main
from python_afmm.fieldio import FieldData, read_field, write_structured_points
from python_afmm.grid import TrialHeap
from python_afmm.models import GridSpec
from python_afmm.shapes import Plane


class TestParser:
    """Test argument parsing."""

    def test_verbs(self):
        """Test that the three verbs parse their options."""
        parser = build_parser()
        args = parser.parse_args(["convergence", "--shape", "circle", "--n", "25", "50", "100"])
        assert args.n_list == [25, 50, 100]
        args = parser.parse_args(["stencil-study", "--h", "0.1", "0.05"])
        assert args.h_list == [0.1, 0.05]

    def test_usage_errors(self):
        """Test unknown verbs and conflicting sources."""
        assert main(["simulate"]) == EXIT_USAGE
        assert main(["reinit", "--shape", "circle", "--input", "x.vtk"]) == EXIT_USAGE
        assert main(["--help"]) == EXIT_OK


class TestStencilStudy:
    """Test the stencil-study verb."""

    def test_writes_table(self, tmp_path):
        """Test the CSV rows and the summary."""
        assert main(["stencil-study", "--out", str(tmp_path), "--x-count", "5"]) == EXIT_OK
        table = pd.read_csv(tmp_path / "stencil_study.csv")
        assert len(table) == 15
        assert {"x", "h", "phi_error", "gradient_error"} <= set(table.columns)
        summary = json.loads((tmp_path / "stencil_study_summary.json").read_text())
        assert len(summary["orders_in_h"]) == 5
        assert summary["settings"]["x_count"] == 5

    def test_radius_too_small(self, tmp_path):
        """Test that r0 <= sqrt(2) * x_max is a usage error."""
        assert main(["stencil-study", "--out", str(tmp_path), "--x-max", "0.8"]) == EXIT_USAGE
        assert main(["stencil-study", "--out", str(tmp_path), "--r0", "0.5"]) == EXIT_USAGE


class TestReinit:
    """Test the reinit verb."""

    def test_named_shape(self, tmp_path):
        """Test the field dump, the summary and the error table of a shape."""
        code = main(["reinit", "--shape", "circle", "--n", "21", "--out", str(tmp_path), "--raw"])
        assert code == EXIT_OK
        data = read_field(tmp_path / "circle_afmm_n21.vtk")
        assert data.psi.shape == (21, 21, 2) and data.hess.shape == (21, 21, 3)
        np.testing.assert_array_equal(read_field(tmp_path / "circle_afmm_n21.raw").phi, data.phi)
        summary = json.loads((tmp_path / "circle_afmm_n21_summary.json").read_text())
        assert summary["settings"]["n"] == 21 and "build" in summary
        errors = pd.read_csv(tmp_path / "circle_afmm_n21_errors.csv")
        assert set(errors["quantity"]) == {"phi", "psi", "kappa"}

    def test_input_field(self, tmp_path):
        """Test reinitializing a field read from disk with the classical engine."""
        grid = GridSpec.cube(2, 15)
        phi0, _ = Plane((0.6, 0.8), 0.1, 3.0).sample(grid)
        source = write_structured_points(tmp_path / "in.vtk", FieldData(grid=grid, phi=phi0))
        code = main(["reinit", "--input", str(source), "--method", "fmm", "--out", str(tmp_path / "out")])
        assert code == EXIT_OK
        data = read_field(tmp_path / "out" / "input_fmm_n15.vtk")
        assert data.psi is None
        away = np.abs(phi0) > 1e-8
        assert np.all(np.sign(data.phi[away]) == np.sign(phi0[away]))

    def test_no_interface(self, tmp_path):
        """Test that an input without a zero crossing is a numerical failure."""
        grid = GridSpec.cube(2, 8)
        source = write_structured_points(tmp_path / "flat.vtk", FieldData(grid=grid, phi=np.ones(grid.shape)))
        assert main(["reinit", "--input", str(source), "--out", str(tmp_path)]) == EXIT_NUMERIC

    def test_broken_march_invariant(self, tmp_path, monkeypatch):
        """Test that a march that loses causality is a numerical failure, not a crash."""
        monkeypatch.setattr(TrialHeap, "is_monotone", lambda self: False)
        assert main(["reinit", "--shape", "circle", "--n", "21", "--out", str(tmp_path)]) == EXIT_NUMERIC

    def test_missing_input(self, tmp_path):
        """Test that an unreadable input is an I/O failure."""
        assert main(["reinit", "--input", str(tmp_path / "absent.vtk"), "--out", str(tmp_path)]) == EXIT_IO

    def test_needs_a_source(self, tmp_path):
        """Test that reinit without a shape or an input is a usage error."""
        assert main(["reinit", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_invalid_config(self, tmp_path):
        """Test that invalid settings from a config file are a usage error."""
        config = tmp_path / "bad.json"
        config.write_text(json.dumps({"alpha": 0.7}))
        assert main(["reinit", "--shape", "circle", "--config", str(config)]) == EXIT_USAGE


class TestConvergence:
    """Test the convergence verb."""

    def test_two_grids(self, tmp_path):
        """Test the long table of a two-grid sweep."""
        code = main(["convergence", "--shape", "circle", "--n", "15", "21", "--out", str(tmp_path)])
        assert code == EXIT_OK
        table = pd.read_csv(tmp_path / "circle_afmm_convergence.csv")
        assert len(table) == 24
        assert set(table["norm"]) == {"l2", "linf"}
        assert table["fitted_order"].isna().all()
        assert table["pairwise_order"].notna().sum() == 12
        summary = json.loads((tmp_path / "circle_afmm_convergence_summary.json").read_text())
        assert summary["settings"]["n_list"] == [15, 21]

    def test_single_grid_is_refused(self, tmp_path):
        """Test that a sweep needs two grid sizes."""
        assert main(["convergence", "--shape", "circle", "--n", "15", "--out", str(tmp_path)]) == EXIT_USAGE
