"""Unit tests for atomic writes, CSV schemas and manifests."""

import json

import numpy as np
import pandas as pd
import pytest

from stochgrad_lab.persistence import (
    MANIFEST_FILE,
    SCHEMA_FILE,
    OutputWriter,
    RunManifest,
    atomic_write_text,
    load_manifest,
    write_csv,
    write_json,
    write_manifest,
)
from stochgrad_lab.stochastic import NoiseModel, StepSchedule, run_sgd


def _manifest(directory) -> RunManifest:
    return RunManifest(
        name="urn",
        kind="polya",
        config_hash="0" * 64,
        tool_version="0.1.0",
        seed=3,
        run_seeds=[11, 12],
        outputs=["endpoints.csv"],
        directory=str(directory),
        summary={"ks_pvalue": 0.4},
        started_at="2026-01-01T00:00:00",
        wall_time=1.5,
    )


class TestWrites:
    """Test atomic text, JSON and CSV writes."""

    def test_atomic_write_creates_parents(self, tmp_path):
        """Missing parent directories are created and no temp file is left."""
        target = tmp_path / "a" / "b" / "out.txt"
        atomic_write_text(target, "hello\n")
        assert target.read_text() == "hello\n"
        assert [p.name for p in target.parent.iterdir()] == ["out.txt"]

    def test_overwrite(self, tmp_path):
        """A second write replaces the first."""
        target = tmp_path / "out.txt"
        atomic_write_text(target, "one")
        atomic_write_text(target, "two")
        assert target.read_text() == "two"

    def test_json_is_sorted(self, tmp_path):
        """Keys are sorted and non-finite floats are kept as tokens."""
        path = write_json(tmp_path / "x.json", {"b": 1, "a": float("inf")})
        text = path.read_text()
        assert text.index('"a"') < text.index('"b"')
        assert "Infinity" in text

    def test_csv_round_trips_floats(self, tmp_path):
        """17 significant digits survive the text form."""
        values = np.array([1.0 / 3.0, np.pi * 1e-12, -2.5e300])
        path = write_csv(tmp_path / "v.csv", pd.DataFrame({"v": values}))
        np.testing.assert_array_equal(pd.read_csv(path)["v"].to_numpy(), values)
        assert "\r" not in path.read_text()


class TestOutputWriter:
    """Test the inventory and the column schema."""

    def test_undocumented_column(self, tmp_path):
        """Every CSV column needs a description."""
        writer = OutputWriter(tmp_path)
        with pytest.raises(ValueError, match="Undocumented"):
            writer.csv("x.csv", pd.DataFrame({"a": [1], "b": [2]}), {"a": "first"})

    def test_schema_and_inventory(self, tmp_path):
        """finish writes schema.json and lists every file once."""
        writer = OutputWriter(tmp_path)
        writer.csv("x.csv", pd.DataFrame({"a": [1.0]}), {"a": "first", "unused": "ignored"})
        writer.json("summary.json", {"k": 1})
        writer.json("summary.json", {"k": 2})
        files = writer.finish()
        assert files == ["summary.json", "schema.json", "x.csv"]
        schema = json.loads((tmp_path / SCHEMA_FILE).read_text())
        assert schema == {"x.csv": {"a": "first"}}

    def test_no_csv_no_schema(self, tmp_path):
        """Without CSVs there is no schema file."""
        writer = OutputWriter(tmp_path)
        writer.json("summary.json", {})
        assert writer.finish() == ["summary.json"]

    def test_trajectory(self, tmp_path, quadratic_2d):
        """Trajectory CSV plus sidecar with documented coordinates."""
        traj = run_sgd(
            quadratic_2d.lyapunov, [1.0, 0.0], StepSchedule(A=1.0), NoiseModel.zero(), 20, seed=0
        )
        writer = OutputWriter(tmp_path)
        paths = writer.trajectory("trajectory_000", traj)
        assert [p.name for p in paths] == ["trajectory_000.csv", "trajectory_000.json"]
        assert set(writer.columns["trajectory_000.csv"]) == {"n", "tau", "x_1", "x_2"}
        frame = pd.read_csv(paths[0])
        assert len(frame) == len(traj)


class TestManifest:
    """Test manifest persistence."""

    def test_round_trip_from_directory(self, tmp_path):
        """load_manifest accepts the directory or the file."""
        manifest = _manifest(tmp_path)
        write_manifest(tmp_path, manifest)
        assert load_manifest(tmp_path) == manifest
        assert load_manifest(tmp_path / MANIFEST_FILE) == manifest

    def test_negative_wall_time(self, tmp_path):
        """Durations cannot be negative."""
        data = {**_manifest(tmp_path).model_dump(), "wall_time": -1.0}
        with pytest.raises(ValueError):
            RunManifest.model_validate(data)
