"""Pydantic models for the lab's analysis reports."""

from enum import Enum

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator


class ResolventStatus(str, Enum):
    """Outcome of a finite-horizon resolvent test."""

    IN_RESOLVENT = "in_resolvent"
    IN_SPECTRUM = "in_spectrum"
    INDETERMINATE = "indeterminate"


class SpectrumSource(str, Enum):
    """Which linearization defines the pointwise spectrum."""

    HESSIAN = "hessian"
    JACOBIAN = "jacobian"


class RateModel(str, Enum):
    """Decay law selected by a rate fit."""

    EXPONENTIAL = "exponential"
    POWER = "power"


class ResolventVerdict(BaseModel):
    """Whether lambda lies in the resolvent of a sampled equilibrium set."""

    lam: float = Field(..., description="Shift lambda of the variational equation")
    status: ResolventStatus = Field(..., description="Three-way verdict")
    in_resolvent: bool | None = Field(
        ..., description="True/False verdict, None when indeterminate"
    )
    witness_growth: float = Field(
        ..., description="Max over directions of log|exp(-lambda t) DPhi_t(x) v| reached"
    )
    weakest_growth: float = Field(
        ..., description="Min over directions of the per-direction growth"
    )
    growth_threshold: float = Field(..., gt=0, description="Log-growth deemed unbounded")
    directions_used: int = Field(..., ge=0, description="Number of (point, direction) pairs tested")
    t_max: float = Field(..., gt=0, description="Integration horizon in each direction")
    failures: int = Field(default=0, ge=0, description="Directions whose integration failed")

    @model_validator(mode="after")
    def check_consistency(self) -> "ResolventVerdict":
        """in_resolvent must agree with status and with the witness growth."""
        expected = {
            ResolventStatus.IN_RESOLVENT: True,
            ResolventStatus.IN_SPECTRUM: False,
            ResolventStatus.INDETERMINATE: None,
        }[self.status]
        if self.in_resolvent is not expected:
            raise ValueError(f"in_resolvent={self.in_resolvent} contradicts status {self.status}")
        if self.in_resolvent and self.witness_growth < self.growth_threshold:
            raise ValueError("witness_growth must reach growth_threshold when in_resolvent")
        return self


class PointSpectrum(BaseModel):
    """Eigenvalue data at one critical point."""

    point: list[float] = Field(..., description="Critical point p")
    eigenvalues: list[float] = Field(..., description="Sorted spectrum Lambda(p)")


class SpectrumReport(BaseModel):
    """Spectrum of a sampled critical set, as points or as external intervals."""

    per_point: list[PointSpectrum] = Field(default_factory=list)
    union: list[float] = Field(
        default_factory=list, description="Sorted deduplicated union Lambda(C)"
    )
    spectrum_intervals: list[tuple[float, float]] | None = Field(
        default=None, description="Disjoint sorted intervals [a_i, b_i]"
    )
    source: SpectrumSource = Field(default=SpectrumSource.HESSIAN)

    @field_validator("union")
    @classmethod
    def validate_union(cls, v: list[float]) -> list[float]:
        """Union must be sorted ascending."""
        if any(b < a for a, b in zip(v, v[1:], strict=False)):
            raise ValueError("Spectrum union must be sorted")
        return v

    @field_validator("spectrum_intervals")
    @classmethod
    def validate_intervals(
        cls, v: list[tuple[float, float]] | None
    ) -> list[tuple[float, float]] | None:
        """Intervals must satisfy a_1 <= b_1 < a_2 <= b_2 < ..."""
        if v is None:
            return v
        for a, b in v:
            if a > b:
                raise ValueError(f"Interval [{a}, {b}] has a > b")
        for (_, b1), (a2, _) in zip(v, v[1:], strict=False):
            if not b1 < a2:
                raise ValueError("Spectrum intervals must be disjoint and sorted")
        return v

    @classmethod
    def from_intervals(cls, intervals) -> "SpectrumReport":
        """Report for an externally supplied interval spectrum."""
        return cls(spectrum_intervals=[(float(a), float(b)) for a, b in intervals])

    def blocks(self) -> list[tuple[float, float]]:
        """Spectrum as closed intervals; points become degenerate intervals."""
        if self.spectrum_intervals is not None:
            return list(self.spectrum_intervals)
        return [(x, x) for x in self.union]


class SpectralConditionVerdict(BaseModel):
    """Whether ]lower, 0[ meets the resolvent, with the best witness."""

    A: float | None = Field(default=None, description="Step-size constant, if applicable")
    lower: float = Field(..., lt=0, description="Left end of the open interval (-1/(2A))")
    holds: bool = Field(..., description="]lower, 0[ intersects the resolvent")
    witness_mu: float | None = Field(default=None, description="Point of the gap")
    margin: float = Field(
        default=0.0, ge=0, description="Distance from witness to the nearest gap boundary"
    )

    @model_validator(mode="after")
    def check_witness(self) -> "SpectralConditionVerdict":
        """A holding verdict carries a witness strictly inside ]lower, 0[."""
        if self.holds:
            if self.witness_mu is None or not self.lower < self.witness_mu < 0:
                raise ValueError("witness_mu must lie strictly inside ]lower, 0[")
            if self.margin <= 0:
                raise ValueError("margin must be positive when the condition holds")
        return self


class ErrorRateEstimate(BaseModel):
    """Least-squares estimate of the exponential decay rate of the APT defect."""

    e_hat: float = Field(..., description="Slope of log defect vs t")
    intercept: float = Field(...)
    window: float = Field(..., gt=0, description="Window length T")
    t_grid: list[float] = Field(default_factory=list, description="Times used in the fit")
    log_defects: list[float] = Field(default_factory=list)
    r_squared: float = Field(...)
    theoretical: float | None = Field(default=None, description="-1/(2A) when beta_sched = 0")
    dropped_points: int = Field(default=0, ge=0, description="Zero defects removed")
    early_slope: float | None = Field(default=None, description="Slope on first half of grid")
    late_slope: float | None = Field(default=None, description="Slope on second half of grid")
    floor: float = Field(default=-5.0, description="Threshold for the -infinity flag")
    minus_infinity: bool = Field(default=False, description="Consistent with e(X) = -inf")
    lambda_bound: float = Field(
        ..., description="X is a lambda-pseudotrajectory for every lambda >= this bound"
    )


class LimitSetReport(BaseModel):
    """Tail cloud summary used as a limit-set estimate."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    cloud: np.ndarray = Field(..., exclude=True, description="Tail iterates, shape (k, m)")
    tail_fraction: float = Field(..., gt=0, le=0.5)
    cloud_size: int = Field(..., ge=1)
    diameter: float = Field(..., ge=0)
    centroid: list[float] = Field(...)
    distance_to_set: float | None = Field(
        default=None, description="Max distance from the cloud to a critical set sample"
    )


class ShadowResult(BaseModel):
    """Best shadowing initial condition for a pseudo-orbit."""

    x_star: list[float] = Field(..., description="Fitted initial condition")
    g_norm: float = Field(..., ge=0, description="|g(xi)|_r")
    h_norm: float = Field(..., ge=0, description="|h(x_star, xi)|_r")
    ratio: float = Field(..., description="h_norm / g_norm (inf when g_norm = 0)")
    guess_h_norm: float = Field(..., ge=0, description="|h(guess, xi)|_r")
    r: float = Field(..., gt=1)
    tail_weight: float = Field(..., description="r^K, conditioning of the truncated norm")
    restarts: int = Field(..., ge=0)
    converged: bool = Field(..., description="Search met its tolerances")

    @model_validator(mode="after")
    def check_improvement(self) -> "ShadowResult":
        """The search never returns something worse than the guess."""
        if self.h_norm > self.guess_h_norm * (1 + 1e-12):
            raise ValueError("h_norm exceeds the norm at the initial guess")
        return self


class ShadowDecayFit(BaseModel):
    """Decay slope of the distance between a path and a candidate shadow."""

    slope: float | None = Field(..., description="Fitted slope, None if the fit was skipped")
    mu: float = Field(..., lt=0)
    distances: list[float] = Field(default_factory=list, description="Per-k distances")
    points_used: int = Field(default=0, ge=0)
    noise_floor: float = Field(..., gt=0)
    shadows: bool = Field(..., description="slope <= mu within tolerance (or at noise floor)")


class LojasiewiczEstimate(BaseModel):
    """Fitted Lojasiewicz exponent and constant at a critical point."""

    point: list[float] = Field(...)
    theta_hat: float = Field(..., gt=0, le=0.5)
    theta_raw: float = Field(..., description="Exponent before clamping")
    c0_hat: float = Field(..., ge=0)
    eps_fit: float = Field(..., ge=0, description="Inflation of the fitted constant")
    radius: float = Field(..., gt=0)
    samples_requested: int = Field(..., ge=1)
    samples_used: int = Field(..., ge=2)
    r_squared: float = Field(...)
    reliable: bool = Field(..., description="R^2 >= 0.9")


class AngleEstimate(BaseModel):
    """Empirical angle-condition constants near a point."""

    c1_hat: float = Field(..., ge=0, le=1 + 1e-9)
    beta_angle_hat: float = Field(..., ge=0)
    samples_used: int = Field(..., ge=1)
    holds: bool = Field(..., description="c1_hat bounded away from zero")


class FlowRateFit(BaseModel):
    """Exponential vs power-law fit of the distance to the flow's limit."""

    kind: RateModel
    exponent: float = Field(..., description="Exponent of the selected model")
    exponential_exponent: float
    exponential_r_squared: float
    power_exponent: float
    power_r_squared: float
    limit_point: list[float]


class DiscreteRateFit(BaseModel):
    """Fit of |x_n - x_inf| against log log n."""

    c_hat: float = Field(..., description="-slope of log distance vs log log n")
    r_squared: float
    points_used: int = Field(..., ge=5)
    x_inf: list[float]
    noise_floor: float = Field(..., ge=0)
    power_slope: float = Field(..., description="Slope of log distance vs log n")
    power_r_squared: float
    super_logarithmic: bool = Field(
        ..., description="Decay is polynomial in n, faster than any power of log n"
    )


class RepulsionReport(BaseModel):
    """Finite-horizon escape statistics from a neighborhood of a critical set."""

    centers: list[list[float]] = Field(..., description="Center point or set sample")
    radius: float = Field(..., gt=0)
    runs: int = Field(..., ge=1)
    steps: int = Field(..., ge=1)
    start_mode: str = Field(default="uniform")
    escape_fraction: float = Field(..., ge=0, le=1)
    escape_times: list[int | None] = Field(..., description="First exit index per run")
    returns_after_escape: int = Field(..., ge=0, description="Re-entries summed over runs")
    ends_inside: int = Field(..., ge=0, description="Runs whose final iterate lies in U")
    non_escapes: list[int] = Field(default_factory=list, description="Runs that never exit")
    failed_runs: list[int] = Field(default_factory=list, description="Runs that raised")
    final_points: list[list[float]] = Field(default_factory=list)

    @model_validator(mode="after")
    def check_fraction(self) -> "RepulsionReport":
        """escape_fraction is the share of runs with a recorded exit."""
        escaped = sum(t is not None for t in self.escape_times)
        if abs(self.escape_fraction - escaped / self.runs) > 1e-12:
            raise ValueError("escape_fraction inconsistent with escape_times")
        return self


class DistributionTestResult(BaseModel):
    """Two-sided Kolmogorov-Smirnov test against Uniform[0, 1]."""

    statistic: float = Field(..., ge=0, le=1)
    pvalue: float = Field(..., ge=0, le=1)
    samples: int = Field(..., ge=1)


class MartingaleCheck(BaseModel):
    """Empirical mean of one-step increments with its standard error."""

    step: int = Field(..., ge=0)
    runs: int = Field(..., ge=2)
    mean_increment: float
    standard_error: float = Field(..., ge=0)
    passes: bool = Field(..., description="|mean| <= 3 standard errors")


class RobbinsMonroConditions(BaseModel):
    """Summability conditions of a step schedule against a noise moment."""

    sum_diverges: bool = Field(..., description="sum gamma_n = inf")
    moment_q: float = Field(..., ge=2)
    power_sum_converges: bool = Field(..., description="sum gamma_n^(1 + q/2) < inf")
    satisfied: bool


class ExcitationEstimate(BaseModel):
    """Noise excitation along the unstable directions of an equilibrium."""

    point: list[float]
    unstable_dimension: int = Field(..., ge=0)
    mean_unstable_norm: float = Field(..., ge=0)
    samples: int = Field(..., ge=1)
