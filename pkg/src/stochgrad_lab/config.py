"""Experiment configuration: validated config files and environment settings."""

import hashlib
import json
import tomllib
from enum import Enum
from pathlib import Path
from typing import Any

from dotenv import load_dotenv
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from pydantic_settings import BaseSettings, SettingsConfigDict

from .errors import ConfigurationError
from .schemas import SpectrumSource
from .stochastic import NoiseKind, NoiseModel, StepSchedule
from .vectorfield import CATALOG_NAMES, POTENTIAL_SYSTEMS, GradientLikeSystem, catalog_system


class ExperimentKind(str, Enum):
    """Experiment families the runner knows how to execute."""

    SGD = "sgd"
    ROBBINS_MONRO = "robbins_monro"
    POLYA = "polya"
    ERROR_RATE = "error_rate"
    LOJASIEWICZ = "lojasiewicz"
    SPECTRUM = "spectrum"
    SHADOW = "shadow"
    REPULSION = "repulsion"
    RATE_FIT = "rate_fit"
    FLOW = "flow"


# Kinds that need a Lyapunov potential on the system
_NEEDS_POTENTIAL = {ExperimentKind.SGD, ExperimentKind.LOJASIEWICZ}

# Kinds that need a starting point
_NEEDS_X0 = {
    ExperimentKind.SGD,
    ExperimentKind.ROBBINS_MONRO,
    ExperimentKind.ERROR_RATE,
    ExperimentKind.SHADOW,
    ExperimentKind.RATE_FIT,
    ExperimentKind.FLOW,
}


class SystemSpec(BaseModel):
    """Catalog system selection."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field(default="quadratic", description="Catalog system name")
    params: list[float] = Field(default_factory=list, description="Catalog parameters")
    dim: int | None = Field(default=None, ge=1, description="Dimension (quadratic/quartic/linear)")

    @field_validator("name")
    @classmethod
    def validate_name(cls, v: str) -> str:
        """Name must be in the catalog."""
        if v not in CATALOG_NAMES:
            raise ValueError(f"unknown system '{v}'; choose one of {', '.join(CATALOG_NAMES)}")
        return v

    def build(self) -> GradientLikeSystem:
        return catalog_system(self.name, self.params, self.dim)


class ScheduleSpec(BaseModel):
    """gamma_n = A / ((n + shift)^alpha log(n + shift)^beta_sched)."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    A: float = Field(default=1.0, gt=0, description="Step scale A")
    beta_sched: float = Field(default=0.0, ge=0, le=1, description="Power of log n")
    alpha: float = Field(default=1.0, gt=0, description="Power of n")
    shift: float = Field(default=0.0, ge=0, description="Index shift")

    def build(self) -> StepSchedule:
        return StepSchedule(**self.model_dump())


class NoiseSpec(BaseModel):
    """Noise family and its parameters."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: NoiseKind = Field(default=NoiseKind.ZERO, description="Noise family")
    sigma: float = Field(default=0.0, ge=0, description="Gaussian scale")
    bound: float = Field(default=0.0, ge=0, description="Uniform half-width")
    floor: float = Field(default=0.0, ge=0, description="Covariance floor (excited_gaussian)")
    moment_q: float = Field(default=4.0, ge=2, description="Declared conditional moment q")

    def build(self) -> NoiseModel:
        return NoiseModel(**self.model_dump())


class AnalysisSpec(BaseModel):
    """Points, grids and windows used by the analysis stage of an experiment."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    x0: list[float] | None = Field(default=None, description="Starting point of runs/flows")
    point: list[float] | None = Field(
        default=None, description="Critical point for Lojasiewicz/angle estimates"
    )
    limit_point: list[float] | None = Field(
        default=None, description="Known limit of rate fits (default: detected)"
    )
    critical_set: str | None = Field(
        default=None, description="Catalog critical-set label, e.g. 'unit_circle' or 'saddle'"
    )
    critical_points: int = Field(default=16, ge=1, description="Sample size of continua")
    critical_span: float = Field(default=2.0, gt=0, description="Half-length of ridge samples")
    spectrum_source: SpectrumSource = Field(
        default=SpectrumSource.HESSIAN, description="hessian (needs V) or jacobian"
    )
    spectrum_intervals: list[tuple[float, float]] | None = Field(
        default=None, description="Externally supplied spectrum intervals"
    )
    radius: float = Field(default=0.1, gt=0, description="Ball or neighborhood radius")
    samples: int = Field(default=2000, ge=10, description="Samples for local estimates")
    t_grid: list[float] | None = Field(default=None, description="Time grid for fits")
    window: float = Field(default=1.0, gt=0, description="Window length T of defects")
    rate_floor: float = Field(default=-5.0, lt=0, description="Threshold of the -inf flag")
    h_points: int = Field(default=100, ge=2, description="Grid size inside each window")
    tail_fraction: float = Field(default=0.1, gt=0, le=0.5, description="Tail cloud fraction")
    shadow_origin: float | None = Field(default=None, description="Time T of xi_0 = X(T)")
    shadow_length: int = Field(default=10, ge=1, description="Pseudo-orbit length K")
    mu: float | None = Field(default=None, lt=0, description="Weight exponent mu < 0")
    restarts: int = Field(default=8, ge=0, description="Shadow search restarts")
    lambda_grid: list[float] | None = Field(default=None, description="Resolvent test grid")
    expansion_time: float = Field(default=20.0, gt=0, description="Horizon of expansion rate")
    start_mode: str = Field(default="uniform", description="Repulsion start: uniform or on_set")
    discrete_rate: bool = Field(default=False, description="Also fit the discrete log-rate")
    stride: int | None = Field(default=None, ge=1, description="Trajectory storage stride")

    @field_validator("t_grid", "lambda_grid")
    @classmethod
    def validate_grid(cls, v: list[float] | None) -> list[float] | None:
        """Grids must be strictly increasing."""
        if v is not None and any(b <= a for a, b in zip(v, v[1:], strict=False)):
            raise ValueError("grid must be strictly increasing")
        return v

    @field_validator("start_mode")
    @classmethod
    def validate_start_mode(cls, v: str) -> str:
        """Only the two supported start modes."""
        if v not in ("uniform", "on_set"):
            raise ValueError(f"start_mode must be 'uniform' or 'on_set', got '{v}'")
        return v


class ExperimentConfig(BaseModel):
    """One experiment: system, recursion, noise, sizes, seed and analysis settings.

    Example:
        >>> cfg = ExperimentConfig(kind="polya", name="urn", system={"name": "polya_zero"})
        >>> cfg.runs
        1
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str = Field(..., min_length=1, description="Experiment label used in file names")
    kind: ExperimentKind = Field(..., description="Experiment family")
    system: SystemSpec = Field(default_factory=SystemSpec)
    schedule: ScheduleSpec = Field(default_factory=ScheduleSpec)
    noise: NoiseSpec = Field(default_factory=NoiseSpec)
    N: int = Field(default=10_000, ge=1, description="Iterations per run")
    runs: int = Field(default=1, ge=1, description="Independent runs")
    seed: int = Field(default=0, ge=0, description="Master seed")
    threads: int = Field(default=1, ge=1, description="Worker threads")
    out_dir: str = Field(default="results", description="Output root directory")
    analysis: AnalysisSpec = Field(default_factory=AnalysisSpec)

    @model_validator(mode="after")
    def check_combination(self) -> "ExperimentConfig":
        """Reject combinations the runner cannot execute, naming the offending field."""
        kind, analysis = self.kind, self.analysis
        try:
            sys = self.system.build()
        except ValueError as e:
            raise ValueError(f"system: {e}") from e

        if kind == ExperimentKind.POLYA and self.system.name != "polya_zero":
            raise ValueError("system.name: polya experiments use the 'polya_zero' system")
        if kind in _NEEDS_POTENTIAL and self.system.name not in POTENTIAL_SYSTEMS:
            raise ValueError(
                f"system.name: {kind.value} needs a Lyapunov potential; "
                f"'{self.system.name}' has none (use one of {', '.join(POTENTIAL_SYSTEMS)})"
            )
        if kind == ExperimentKind.SGD and not sys.pure_gradient_flag:
            raise ValueError(
                f"system.name: sgd needs a pure gradient system; use robbins_monro for "
                f"'{self.system.name}'"
            )
        hessian = analysis.spectrum_source == SpectrumSource.HESSIAN
        needs_spectrum = kind == ExperimentKind.SPECTRUM or (
            kind == ExperimentKind.SGD and analysis.critical_set is not None
        )
        if needs_spectrum and hessian and sys.lyapunov is None:
            raise ValueError(
                "analysis.spectrum_source: the hessian spectrum needs a potential; "
                "set spectrum_source = 'jacobian'"
            )

        if kind in _NEEDS_X0:
            if analysis.x0 is None:
                raise ValueError(f"analysis.x0: required for {kind.value} experiments")
            if len(analysis.x0) != sys.dimension:
                raise ValueError(
                    f"analysis.x0: has dimension {len(analysis.x0)}, "
                    f"system '{sys.name}' needs {sys.dimension}"
                )
        for field_name in ("point", "limit_point"):
            value = getattr(analysis, field_name)
            if value is not None and len(value) != sys.dimension:
                raise ValueError(
                    f"analysis.{field_name}: has dimension {len(value)}, "
                    f"system '{sys.name}' needs {sys.dimension}"
                )

        if kind == ExperimentKind.LOJASIEWICZ and analysis.point is None:
            raise ValueError("analysis.point: required for lojasiewicz experiments")
        if kind in (ExperimentKind.ERROR_RATE, ExperimentKind.RATE_FIT, ExperimentKind.FLOW):
            if analysis.t_grid is None or len(analysis.t_grid) < 5:
                raise ValueError(f"analysis.t_grid: {kind.value} needs at least 5 grid times")
        needs_set = (ExperimentKind.SPECTRUM, ExperimentKind.REPULSION)
        if kind in needs_set and analysis.critical_set is None:
            if analysis.spectrum_intervals is None or kind == ExperimentKind.REPULSION:
                raise ValueError(f"analysis.critical_set: required for {kind.value} experiments")
        if kind == ExperimentKind.SHADOW:
            if analysis.shadow_origin is None:
                raise ValueError("analysis.shadow_origin: required for shadow experiments")
            if analysis.mu is None and analysis.critical_set is None:
                raise ValueError(
                    "analysis.mu: give mu < 0 or a critical_set to take mu from its spectral gap"
                )
        if kind == ExperimentKind.POLYA and self.runs < 100:
            raise ValueError("runs: the distribution test needs at least 100 urns")
        if kind == ExperimentKind.REPULSION and self.noise.kind == NoiseKind.ZERO:
            if analysis.start_mode == "uniform":
                logger.warning("Repulsion with zero noise: escapes are not expected")
        return self


class LabSettings(BaseSettings):
    """Environment overrides, read from STOCHGRAD_* variables and .env."""

    model_config = SettingsConfigDict(env_prefix="STOCHGRAD_", env_file=".env", extra="ignore")

    threads: int | None = Field(default=None, ge=1, description="Worker threads")
    out_dir: str | None = Field(default=None, description="Output root directory")
    show_progress: bool = Field(default=True, description="Show tqdm progress bars")


def load_config(path: str | Path) -> ExperimentConfig:
    """Parse and validate a TOML or JSON experiment config.

    Raises:
        ConfigurationError: Missing file or unsupported extension
        pydantic.ValidationError: Invalid field values or combinations
    """
    path = Path(path)
    if not path.is_file():
        raise ConfigurationError(f"Config file not found: {path}")
    suffix = path.suffix.lower()
    try:
        if suffix == ".toml":
            with open(path, "rb") as f:
                data = tomllib.load(f)
        elif suffix == ".json":
            data = json.loads(path.read_text(encoding="utf-8"))
        else:
            raise ConfigurationError(f"Unsupported config format '{suffix}' (use .toml or .json)")
    except (tomllib.TOMLDecodeError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"Cannot parse {path}: {e}") from e
    logger.debug(f"Loaded config {path}")
    return ExperimentConfig.model_validate(data)


def serialize_config(cfg: ExperimentConfig) -> str:
    """Canonical JSON text of a validated config."""
    return json.dumps(cfg.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def parse_config(text: str) -> ExperimentConfig:
    return ExperimentConfig.model_validate_json(text)


def config_hash(cfg: ExperimentConfig) -> str:
    """SHA-256 of the canonical JSON, ignoring threads and out_dir."""
    data: dict[str, Any] = cfg.model_dump(mode="json", exclude={"threads", "out_dir"})
    canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


def apply_overrides(
    cfg: ExperimentConfig,
    seed: int | None = None,
    out_dir: str | None = None,
    threads: int | None = None,
    settings: LabSettings | None = None,
) -> ExperimentConfig:
    """Precedence: explicit argument > environment > config file."""
    if settings is None:
        load_dotenv()
        settings = LabSettings()
    update: dict[str, Any] = {}
    if seed is not None:
        update["seed"] = seed
    resolved_out = out_dir or settings.out_dir
    if resolved_out:
        update["out_dir"] = resolved_out
    resolved_threads = threads or settings.threads
    if resolved_threads:
        update["threads"] = resolved_threads
    if not update:
        return cfg
    return ExperimentConfig.model_validate({**cfg.model_dump(mode="json"), **update})
