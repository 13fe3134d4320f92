"""End-to-end tests of the experiment runners on small configs."""

import json

import pandas as pd
import pytest

from stochgrad_lab.config import ExperimentConfig
from stochgrad_lab.experiments import RUNNERS, clean, run_experiment
from stochgrad_lab.persistence import MANIFEST_FILE, load_manifest

NUMERICAL_FILES = ("config.json", "summary.json", "endpoints.csv", "distribution.json")


def _config(tmp_path, **kwargs) -> ExperimentConfig:
    return ExperimentConfig(out_dir=str(tmp_path), **kwargs)


def _urns(tmp_path, threads: int) -> ExperimentConfig:
    return _config(
        tmp_path / f"threads_{threads}",
        name="urn",
        kind="polya",
        system={"name": "polya_zero"},
        runs=120,
        N=300,
        seed=4,
        threads=threads,
    )


class TestClean:
    """Test JSON cleaning of summaries."""

    def test_non_finite(self):
        """inf and nan become None, nested containers are walked."""
        import numpy as np

        data = {"a": np.float64("inf"), "b": [np.int64(2), np.nan], "c": (np.bool_(True),)}
        assert clean(data) == {"a": None, "b": [2, None], "c": [True]}


class TestRunners:
    """Test every experiment kind on a desk-sized config."""

    def test_every_kind_has_a_runner(self):
        """The runner table covers every kind."""
        from stochgrad_lab.config import ExperimentKind

        assert set(RUNNERS) == set(ExperimentKind)

    def test_polya_is_thread_independent(self, tmp_path):
        """Numerical outputs are byte-identical for 1 and 2 threads."""
        one = run_experiment(_urns(tmp_path, 1), show_progress=False)
        two = run_experiment(_urns(tmp_path, 2), show_progress=False)
        assert one.config_hash == two.config_hash
        assert one.run_seeds == two.run_seeds
        for name in NUMERICAL_FILES:
            a = (tmp_path / "threads_1" / "urn" / name).read_bytes()
            b = (tmp_path / "threads_2" / "urn" / name).read_bytes()
            assert a == b, name

    def test_polya_manifest(self, tmp_path):
        """The manifest lists outputs and carries the claim."""
        manifest = run_experiment(_urns(tmp_path, 1), show_progress=False)
        directory = tmp_path / "threads_1" / "urn"
        assert (directory / MANIFEST_FILE).is_file()
        assert load_manifest(directory) == manifest
        assert "endpoints.csv" in manifest.outputs
        assert "schema.json" in manifest.outputs
        assert manifest.claim
        assert 0.0 <= manifest.summary["ks_pvalue"] <= 1.0
        assert len(pd.read_csv(directory / "endpoints.csv")) == 120

    def test_config_excludes_execution_settings(self, tmp_path):
        """config.json leaves out threads and out_dir."""
        run_experiment(_urns(tmp_path, 2), show_progress=False)
        data = json.loads((tmp_path / "threads_2" / "urn" / "config.json").read_text())
        assert "threads" not in data and "out_dir" not in data
        assert data["seed"] == 4

    def test_sgd_on_circle(self, tmp_path):
        """Trajectory files, limit sets and the spectral condition of the circle."""
        cfg = _config(
            tmp_path,
            name="circle",
            kind="sgd",
            system={"name": "circle"},
            schedule={"A": 0.5},
            noise={"kind": "gaussian_iso", "sigma": 0.1},
            N=20_000,
            runs=2,
            analysis={"x0": [1.5, 0.3], "critical_set": "unit_circle", "critical_points": 360},
        )
        manifest = run_experiment(cfg, show_progress=False)
        assert {"trajectory_000.csv", "trajectory_001.json", "limit_sets.csv"} <= set(
            manifest.outputs
        )
        assert manifest.summary["spectral_condition"] is True
        assert manifest.summary["witness_mu"] == pytest.approx(-0.5)
        assert manifest.summary["max_distance"] < 0.05

    def test_robbins_monro_on_swirl(self, tmp_path):
        """Non-gradient fields run through the Robbins-Monro runner."""
        cfg = _config(
            tmp_path,
            name="swirl",
            kind="robbins_monro",
            system={"name": "swirl", "params": [0.5]},
            N=2000,
            analysis={"x0": [1.0, 1.0]},
        )
        manifest = run_experiment(cfg, show_progress=False)
        assert manifest.summary["max_diameter"] < 0.1
        assert manifest.summary["robbins_monro_conditions"] is True

    def test_spectrum_on_circle(self, tmp_path):
        """{-2, 0} with A = 1 holds with witness -1/4."""
        cfg = _config(
            tmp_path,
            name="spectrum",
            kind="spectrum",
            system={"name": "circle"},
            analysis={"critical_set": "unit_circle"},
        )
        summary = run_experiment(cfg, show_progress=False).summary
        assert summary["holds"] is True
        assert summary["witness_mu"] == pytest.approx(-0.25)
        assert summary["linearly_unstable"] is False
        assert summary["critical_step_scale"] is None

    def test_spectrum_from_intervals(self, tmp_path):
        """An interval spectrum covering ]-1/2, 0[ fails the condition."""
        cfg = _config(
            tmp_path,
            name="intervals",
            kind="spectrum",
            analysis={"spectrum_intervals": [[-1.0, 0.0]]},
        )
        summary = run_experiment(cfg, show_progress=False).summary
        assert summary["holds"] is False
        assert summary["witness_mu"] is None

    def test_saddle_spectrum_excitation(self, tmp_path):
        """Unstable sets with noise report the unstable noise level."""
        cfg = _config(
            tmp_path,
            name="saddle",
            kind="spectrum",
            system={"name": "double_well"},
            noise={"kind": "gaussian_iso", "sigma": 1.0},
            analysis={"critical_set": "saddle"},
        )
        summary = run_experiment(cfg, show_progress=False).summary
        assert summary["linearly_unstable"] is True
        assert summary["mean_unstable_noise"] == pytest.approx(0.8, abs=0.05)

    def test_lojasiewicz(self, tmp_path):
        """Quartic exponent and the gradient angle."""
        cfg = _config(
            tmp_path,
            name="quartic",
            kind="lojasiewicz",
            system={"name": "quartic"},
            analysis={"point": [0.0], "samples": 500},
        )
        summary = run_experiment(cfg, show_progress=False).summary
        assert summary["theta_hat"] == pytest.approx(0.25, abs=1e-6)
        assert summary["c1_hat"] == pytest.approx(1.0)

    def test_error_rate(self, tmp_path):
        """Per-run fits, the median and its theoretical value."""
        cfg = _config(
            tmp_path,
            name="rate",
            kind="error_rate",
            noise={"kind": "gaussian_iso", "sigma": 0.5},
            N=20_000,
            runs=2,
            analysis={"x0": [1.0], "t_grid": [3.0, 4.0, 5.0, 6.0, 7.0, 8.0], "stride": 1},
        )
        manifest = run_experiment(cfg, show_progress=False)
        assert manifest.summary["theoretical"] == pytest.approx(-0.5)
        assert len(manifest.summary["e_hat_per_run"]) == 2
        fits = pd.read_csv(tmp_path / "rate" / "error_rate_fits.csv")
        assert set(fits["run"]) == {0, 1}

    def test_shadow_with_spectral_mu(self, tmp_path):
        """Without mu the witness of the spectral condition is used."""
        cfg = _config(
            tmp_path,
            name="shadow",
            kind="shadow",
            noise={"kind": "gaussian_iso", "sigma": 0.1},
            N=20_000,
            analysis={
                "x0": [1.0],
                "critical_set": "origin",
                "shadow_origin": 1.0,
                "shadow_length": 5,
                "restarts": 2,
            },
        )
        manifest = run_experiment(cfg, show_progress=False)
        assert manifest.summary["mu"] == pytest.approx(-0.25)
        assert "shadow_distances.csv" in manifest.outputs
        assert manifest.summary["h_norm"] >= 0.0

    def test_repulsion(self, tmp_path):
        """Escape rows for every completed run."""
        cfg = _config(
            tmp_path,
            name="saddle",
            kind="repulsion",
            system={"name": "double_well"},
            noise={"kind": "excited_gaussian", "sigma": 0.1, "floor": 0.005},
            runs=4,
            N=5000,
            analysis={"critical_set": "saddle"},
        )
        manifest = run_experiment(cfg, show_progress=False)
        escapes = pd.read_csv(tmp_path / "saddle" / "escapes.csv")
        assert list(escapes.columns) == ["run", "escape_time", "final_1", "final_2"]
        assert len(escapes) == 4
        assert manifest.summary["escapes"] == round(manifest.summary["escape_fraction"] * 4)

    def test_rate_fit(self, tmp_path):
        """Power-law flow decay on the quartic with a predicted constant."""
        cfg = _config(
            tmp_path,
            name="quartic_rate",
            kind="rate_fit",
            system={"name": "quartic"},
            analysis={
                "x0": [1.0],
                "limit_point": [0.0],
                "t_grid": [10.0, 30.0, 100.0, 300.0, 1000.0],
                "samples": 300,
            },
        )
        summary = run_experiment(cfg, show_progress=False).summary
        assert summary["rate_kind"] == "power"
        assert summary["exponent"] == pytest.approx(-0.5, abs=0.03)
        assert summary["predicted_c"] is not None

    def test_flow_resolvent(self, tmp_path):
        """Resolvent verdicts on diag(-1, 2) and its expansion rate."""
        cfg = _config(
            tmp_path,
            name="linear",
            kind="flow",
            system={"name": "linear", "params": [1.0, -2.0]},
            analysis={
                "x0": [1.0, 0.0],
                "t_grid": [0.0, 0.5, 1.0, 1.5, 2.0],
                "critical_set": "origin",
                "lambda_grid": [-1.5, -0.5, 0.5, 1.5],
                "spectrum_source": "jacobian",
            },
        )
        summary = run_experiment(cfg, show_progress=False).summary
        assert summary["misclassified"] == 0
        assert summary["spectrum"] == pytest.approx([-1.0, 2.0])
        assert summary["expansion_rate"] == pytest.approx(-1.0, abs=0.05)
        assert "lyapunov_decreasing" not in summary
