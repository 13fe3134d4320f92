"""Interpolated processes, pseudo-trajectory defects, error rates and limit-set estimates."""

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import stats
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist

from .errors import EstimationError
from .flow import FlowIntegrator, flow_samples
from .schemas import ErrorRateEstimate, LimitSetReport
from .stochastic import StepSchedule, Trajectory
from .vectorfield import CriticalSetSample, GradientLikeSystem

MIN_FIT_POINTS = 5
DEFAULT_RATE_FLOOR = -5.0
_DIAMETER_SUBSAMPLE = 2048


class InterpolatedPath(BaseModel):
    """Piecewise-affine path through the knots (tau_n, x_n)."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    taus: np.ndarray = Field(..., description="Knot times, strictly increasing")
    states: np.ndarray = Field(..., description="Knot values, shape (k, m)")
    schedule: StepSchedule | None = Field(default=None, description="Schedule of the source run")

    @model_validator(mode="after")
    def check_knots(self) -> "InterpolatedPath":
        """At least two knots, matching shapes, strictly increasing times."""
        if self.taus.ndim != 1 or self.states.ndim != 2:
            raise ValueError("taus must be 1-D and states 2-D")
        if self.taus.size < 2:
            raise ValueError("Interpolation needs at least two knots")
        if self.states.shape[0] != self.taus.size:
            raise ValueError("taus and states have different lengths")
        if np.any(np.diff(self.taus) <= 0):
            raise ValueError("Knot times must be strictly increasing")
        return self

    @property
    def start(self) -> float:
        return float(self.taus[0])

    @property
    def end(self) -> float:
        return float(self.taus[-1])

    @property
    def dimension(self) -> int:
        return self.states.shape[1]

    def __call__(self, t):
        """X(t) for a scalar t (shape (m,)) or an array of times (shape (k, m))."""
        times = np.atleast_1d(np.asarray(t, dtype=float))
        if times.min() < self.start or times.max() > self.end:
            raise ValueError(f"t outside path domain [{self.start:.6g}, {self.end:.6g}]")
        values = np.column_stack(
            [np.interp(times, self.taus, self.states[:, j]) for j in range(self.dimension)]
        )
        return values[0] if np.ndim(t) == 0 else values

    def knots_between(self, a: float, b: float) -> np.ndarray:
        """Knot times in [a, b]."""
        lo = np.searchsorted(self.taus, a, side="left")
        hi = np.searchsorted(self.taus, b, side="right")
        return self.taus[lo:hi]


def interpolate(traj: Trajectory) -> InterpolatedPath:
    """Piecewise-affine interpolation of the stored iterates.

    Between stored knots of a thinned trajectory the path joins stored neighbours
    only, so it is an approximation of the full interpolated process.
    """
    if len(traj) < 2:
        raise ValueError("Trajectory needs at least two stored iterates")
    return InterpolatedPath(taus=traj.taus, states=traj.states, schedule=traj.schedule)


def apt_defect(
    X: InterpolatedPath,
    sys: GradientLikeSystem,
    t: float,
    T: float,
    h_points: int = 100,
    integ: FlowIntegrator | None = None,
) -> float:
    """sup over h in [0, T] of |X(t + h) - Phi_h(X(t))|.

    The supremum runs over an even grid of h_points values plus every knot time
    inside the window.
    """
    if T <= 0:
        raise ValueError(f"Window T must be positive, got {T}")
    if t < X.start or t + T > X.end:
        raise ValueError(f"Window [{t:.6g}, {t + T:.6g}] outside [{X.start:.6g}, {X.end:.6g}]")

    hs = np.union1d(np.linspace(0.0, T, h_points), X.knots_between(t, t + T) - t)
    hs = hs[(hs >= 0) & (hs <= T)]
    path = X(t + hs)
    flow = flow_samples(sys, path[0], hs, integ)
    return float(np.max(np.linalg.norm(path - flow, axis=1)))


def _slope(t: np.ndarray, y: np.ndarray) -> float:
    return float(stats.linregress(t, y).slope)


def fit_error_rate(
    t_grid,
    defects,
    T: float,
    theoretical: float | None = None,
    floor: float = DEFAULT_RATE_FLOOR,
) -> ErrorRateEstimate:
    """Least-squares slope of log defect against t.

    Zero (or non-finite) defects are dropped. The -infinity flag needs a slope
    below `floor` and a later half-grid slope below the earlier one.

    Raises:
        EstimationError: Fewer than 5 usable points
    """
    t = np.asarray(t_grid, dtype=float)
    d = np.asarray(defects, dtype=float)
    usable = np.isfinite(d) & (d > 0)
    dropped = int(np.sum(~usable))
    if dropped:
        logger.warning(f"Dropped {dropped} zero defects from the error-rate fit")
    t, d = t[usable], d[usable]
    if t.size < MIN_FIT_POINTS:
        raise EstimationError(f"Error-rate fit needs {MIN_FIT_POINTS} points, got {t.size}")

    log_d = np.log(d)
    fit = stats.linregress(t, log_d)
    half = t.size // 2
    early = _slope(t[: half + 1], log_d[: half + 1])
    late = _slope(t[half:], log_d[half:])
    e_hat = float(fit.slope)

    return ErrorRateEstimate(
        e_hat=e_hat,
        intercept=float(fit.intercept),
        window=T,
        t_grid=t.tolist(),
        log_defects=log_d.tolist(),
        r_squared=float(fit.rvalue**2),
        theoretical=theoretical,
        dropped_points=dropped,
        early_slope=early,
        late_slope=late,
        floor=floor,
        minus_infinity=bool(e_hat < floor and late < early),
        lambda_bound=min(e_hat, 0.0),
    )


def theoretical_error_rate(sched: StepSchedule | None) -> float | None:
    """-1/(2A) for gamma_n = A/n schedules, else None."""
    if sched is None or sched.beta_sched != 0 or sched.alpha != 1:
        return None
    return -1.0 / (2.0 * sched.A)


def error_rate(
    X: InterpolatedPath,
    sys: GradientLikeSystem,
    t_grid,
    T: float = 1.0,
    floor: float = DEFAULT_RATE_FLOOR,
    h_points: int = 100,
    integ: FlowIntegrator | None = None,
) -> ErrorRateEstimate:
    """Estimate the error rate e(X) from defects on a late-time grid.

    Args:
        X: Interpolated process
        sys: System whose flow X should track
        t_grid: Increasing times with [t, t + T] inside the path domain
        T: Window length
        floor: Threshold of the -infinity flag
        h_points: Even h-grid size inside each window
        integ: Integrator tolerances

    Returns:
        ErrorRateEstimate with the fit diagnostics
    """
    grid = np.asarray(t_grid, dtype=float)
    if np.any(np.diff(grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    defects = []
    for t in grid:
        defects.append(apt_defect(X, sys, float(t), T, h_points, integ))
        logger.debug(f"Integrating window at t={t:.3f}: defect {defects[-1]:.3e}")
    return fit_error_rate(grid, defects, T, theoretical_error_rate(X.schedule), floor)


def _diameter(cloud: np.ndarray) -> float:
    if cloud.shape[0] < 2:
        return 0.0
    if cloud.shape[1] == 1:
        return float(np.ptp(cloud[:, 0]))
    if cloud.shape[0] > _DIAMETER_SUBSAMPLE:
        picks = np.linspace(0, cloud.shape[0] - 1, _DIAMETER_SUBSAMPLE).astype(int)
        extremes = np.concatenate([cloud.argmin(axis=0), cloud.argmax(axis=0)])
        cloud = cloud[np.union1d(picks, extremes)]
    return float(np.max(pdist(cloud)))


def limit_set_estimate(
    traj: Trajectory,
    tail_fraction: float = 0.1,
    critical_set: CriticalSetSample | None = None,
) -> LimitSetReport:
    """Tail cloud of stored iterates with its diameter and distance to a set.

    Large clouds use a subsample plus the coordinate extremes for the diameter.
    """
    if not 0 < tail_fraction <= 0.5:
        raise ValueError(f"tail_fraction must lie in (0, 0.5], got {tail_fraction}")
    size = max(1, int(np.ceil(tail_fraction * len(traj))))
    cloud = traj.states[-size:]

    distance = None
    if critical_set is not None and len(critical_set):
        distances, _ = cKDTree(critical_set.as_array()).query(cloud)
        distance = float(np.max(distances))

    return LimitSetReport(
        cloud=cloud,
        tail_fraction=tail_fraction,
        cloud_size=size,
        diameter=_diameter(cloud),
        centroid=cloud.mean(axis=0).tolist(),
        distance_to_set=distance,
    )
