"""Atomic CSV/JSON output, column schema and run manifests."""

import io
import json
import os
import tempfile
from pathlib import Path
from typing import Any

import pandas as pd
from loguru import logger
from pydantic import BaseModel, Field

from .stochastic import Trajectory

CSV_FLOAT_FORMAT = "%.17g"
SCHEMA_FILE = "schema.json"
MANIFEST_FILE = "manifest.json"


def atomic_write_text(path: Path, text: str) -> Path:
    """Write text to a temp file next to path, then rename it into place."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise
    return path


def to_json_text(data: BaseModel | dict[str, Any] | list[Any]) -> str:
    if isinstance(data, BaseModel):
        data = data.model_dump(mode="json")
    return json.dumps(data, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_json(path: Path, data: BaseModel | dict[str, Any] | list[Any]) -> Path:
    return atomic_write_text(path, to_json_text(data))


def write_csv(path: Path, frame: pd.DataFrame) -> Path:
    buffer = io.StringIO()
    frame.to_csv(buffer, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    return atomic_write_text(path, buffer.getvalue())


class OutputWriter:
    """Writes the files of one experiment and tracks the inventory and CSV columns.

    Example:
        >>> writer = OutputWriter(Path("results/circle"))
        >>> writer.csv("endpoints.csv", frame, {"run": "Run index", "x_N": "Final value"})
        >>> writer.finish()
    """

    def __init__(self, directory: Path):
        self.directory = Path(directory)
        self.directory.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []
        self.columns: dict[str, dict[str, str]] = {}

    def _record(self, path: Path) -> Path:
        name = path.relative_to(self.directory).as_posix()
        if name not in self.files:
            self.files.append(name)
        logger.debug(f"Wrote {path}")
        return path

    def csv(self, name: str, frame: pd.DataFrame, columns: dict[str, str]) -> Path:
        """Write a CSV and document its columns; every column needs a description."""
        missing = [c for c in frame.columns if c not in columns]
        if missing:
            raise ValueError(f"Undocumented CSV columns in {name}: {missing}")
        self.columns[name] = {c: columns[c] for c in frame.columns}
        return self._record(write_csv(self.directory / name, frame))

    def json(self, name: str, data: BaseModel | dict[str, Any] | list[Any]) -> Path:
        return self._record(write_json(self.directory / name, data))

    def trajectory(self, stem: str, traj: Trajectory) -> list[Path]:
        """Trajectory CSV (n, tau, x_1..x_m) plus its JSON sidecar."""
        columns = {"n": "Iteration index", "tau": "Cumulative step tau_n"}
        columns.update({f"x_{j + 1}": f"Coordinate {j + 1} of x_n" for j in range(traj.dimension)})
        return [
            self.csv(f"{stem}.csv", traj.to_frame(), columns),
            self.json(f"{stem}.json", traj.sidecar()),
        ]

    def finish(self) -> list[str]:
        """Write schema.json when any CSV was written; return the sorted inventory."""
        if self.columns:
            self.json(SCHEMA_FILE, self.columns)
        return sorted(self.files)


class RunManifest(BaseModel):
    """Record of one executed experiment.

    Everything except started_at and wall_time is a function of the config.
    """

    name: str = Field(..., description="Experiment label")
    kind: str = Field(..., description="Experiment family")
    config_hash: str = Field(..., description="SHA-256 of the canonical config")
    tool_version: str = Field(...)
    seed: int = Field(..., ge=0, description="Master seed")
    run_seeds: list[int] = Field(default_factory=list, description="Derived per-run seeds")
    outputs: list[str] = Field(default_factory=list, description="Files relative to directory")
    directory: str = Field(..., description="Output directory")
    claim: str = Field(default="", description="Property the experiment tests")
    summary: dict[str, Any] = Field(default_factory=dict, description="Headline numbers")
    started_at: str = Field(..., description="ISO timestamp")
    wall_time: float = Field(..., ge=0, description="Seconds")


def write_manifest(directory: Path, manifest: RunManifest) -> Path:
    return write_json(Path(directory) / MANIFEST_FILE, manifest)


def load_manifest(path: Path) -> RunManifest:
    """Read a manifest from a file or from a directory holding manifest.json."""
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST_FILE
    return RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
