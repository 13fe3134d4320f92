"""Tests for the command-line interface and the manifest report."""

import json

import pytest
from pydantic import ValidationError

from stochgrad_lab.cli import (
    EXIT_NUMERICAL,
    EXIT_OK,
    EXIT_VALIDATION,
    _format_validation,
    build_parser,
    build_report,
    main,
)
from stochgrad_lab.config import ExperimentConfig
from stochgrad_lab.persistence import RunManifest, write_manifest

URN_TOML = 'name = "urn"\nkind = "polya"\nruns = 100\nN = 200\n\n[system]\nname = "polya_zero"\n'


@pytest.fixture(autouse=True)
def isolated_env(tmp_path, monkeypatch):
    """Run every CLI test from an empty directory without progress bars."""
    monkeypatch.chdir(tmp_path)
    monkeypatch.setenv("STOCHGRAD_SHOW_PROGRESS", "false")
    monkeypatch.delenv("STOCHGRAD_OUT_DIR", raising=False)
    monkeypatch.delenv("STOCHGRAD_THREADS", raising=False)


def _write(tmp_path, name: str, text: str):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def _repulsion_manifest(directory, runs: int, escapes: int) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    write_manifest(
        directory,
        RunManifest(
            name=directory.name,
            kind="repulsion",
            config_hash="f" * 64,
            tool_version="0.1.0",
            seed=0,
            directory=str(directory),
            summary={"runs": runs, "escapes": escapes, "escape_fraction": escapes / runs},
            started_at="2026-01-01T00:00:00",
            wall_time=0.0,
        ),
    )


class TestParser:
    """Test argument parsing."""

    def test_per_kind_subcommands(self):
        """Every experiment kind has its own subcommand."""
        args = build_parser().parse_args(["polya", "urn.toml", "--seed", "3"])
        assert args.config == "urn.toml"
        assert args.seed == 3

    def test_command_required(self):
        """A bare invocation is an argparse error."""
        with pytest.raises(SystemExit):
            build_parser().parse_args([])


class TestRun:
    """Test exit codes of run commands."""

    def test_success(self, tmp_path, capsys):
        """A valid config exits 0 and prints the manifest path."""
        config = _write(tmp_path, "urn.toml", URN_TOML)
        assert main(["run", config, "--out-dir", str(tmp_path / "out")]) == EXIT_OK
        printed = capsys.readouterr().out.strip()
        assert printed.endswith("manifest.json")
        assert (tmp_path / "out" / "urn" / "endpoints.csv").is_file()

    def test_seed_override(self, tmp_path):
        """--seed replaces the file seed in the written config."""
        config = _write(tmp_path, "urn.toml", URN_TOML)
        main(["polya", config, "--seed", "7", "--out-dir", str(tmp_path / "out")])
        written = json.loads((tmp_path / "out" / "urn" / "config.json").read_text())
        assert written["seed"] == 7

    def test_environment_out_dir(self, tmp_path, monkeypatch):
        """STOCHGRAD_OUT_DIR applies when no flag is given."""
        monkeypatch.setenv("STOCHGRAD_OUT_DIR", str(tmp_path / "env_out"))
        config = _write(tmp_path, "urn.toml", URN_TOML)
        assert main(["run", config]) == EXIT_OK
        assert (tmp_path / "env_out" / "urn" / "manifest.json").is_file()

    def test_invalid_config(self, tmp_path):
        """A config failing validation exits 2."""
        config = _write(tmp_path, "bad.toml", 'name = "a"\nkind = "sgd"\n')
        assert main(["run", config]) == EXIT_VALIDATION

    @pytest.mark.parametrize("threads", ["zero", "0", "-2"])
    def test_invalid_environment(self, tmp_path, monkeypatch, threads):
        """A bad STOCHGRAD_THREADS exits 2 before anything runs."""
        monkeypatch.setenv("STOCHGRAD_THREADS", threads)
        config = _write(tmp_path, "urn.toml", URN_TOML)
        assert main(["run", config, "--out-dir", str(tmp_path / "out")]) == EXIT_VALIDATION
        assert not (tmp_path / "out").exists()

    def test_missing_file(self, tmp_path):
        """A missing config file exits 2."""
        assert main(["run", str(tmp_path / "nope.toml")]) == EXIT_VALIDATION

    def test_kind_mismatch(self, tmp_path):
        """The kind subcommand must match the config."""
        config = _write(tmp_path, "urn.toml", URN_TOML)
        assert main(["sgd", config]) == EXIT_VALIDATION

    def test_numerical_failure(self, tmp_path):
        """A rate fit toward the wrong limit exits 3."""
        config = _write(
            tmp_path,
            "wrong.toml",
            'name = "wrong"\nkind = "rate_fit"\n\n[analysis]\nx0 = [0.5]\n'
            "limit_point = [2.0]\nt_grid = [1.0, 2.0, 3.0, 4.0, 5.0]\n",
        )
        assert main(["run", config]) == EXIT_NUMERICAL

    def test_validation_message_names_field(self):
        """Errors are reported as field: message."""
        with pytest.raises(ValidationError) as info:
            ExperimentConfig(name="a", kind="sgd", N=0, analysis={"x0": [1.0]})
        assert _format_validation(info.value).startswith("N: ")


class TestReport:
    """Test report aggregation."""

    def test_empty(self, tmp_path):
        """No manifests still produce a report."""
        out = tmp_path / "report.json"
        assert main(["report", "--json", str(out)]) == EXIT_OK
        assert json.loads(out.read_text()) == {"missing": [], "rows": []}

    def test_pooled_repulsion(self, tmp_path):
        """Escape counts are pooled across repulsion manifests."""
        _repulsion_manifest(tmp_path / "saddle", 200, 199)
        _repulsion_manifest(tmp_path / "ridge", 200, 197)
        report = build_report([str(tmp_path / "saddle"), str(tmp_path / "ridge" / "manifest.json")])
        assert [row["name"] for row in report["rows"]] == ["ridge", "saddle"]
        assert report["pooled_repulsion"] == {
            "runs": 400,
            "escapes": 396,
            "escape_fraction": 0.99,
        }
        assert "0.995" in report["rows"][1]["result"]

    def test_unreadable_and_missing(self, tmp_path):
        """Broken manifests and missing outputs are listed, not fatal."""
        (tmp_path / "broken").mkdir()
        (tmp_path / "broken" / "manifest.json").write_text("{not json")
        config = _write(tmp_path, "urn.toml", URN_TOML)
        main(["run", config, "--out-dir", str(tmp_path / "out")])
        (tmp_path / "out" / "urn" / "endpoints.csv").unlink()

        report = build_report([str(tmp_path / "broken"), str(tmp_path / "out" / "urn")])
        assert len(report["rows"]) == 1
        assert report["rows"][0]["kind"] == "polya"
        assert any(name.endswith("broken") for name in report["missing"])
        assert any(name.endswith("endpoints.csv") for name in report["missing"])
