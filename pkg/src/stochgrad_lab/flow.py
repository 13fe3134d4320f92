"""Flow integration, variational equations, resolvent tests and expansion rates."""

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field
from scipy.integrate import solve_ivp

from .errors import FlowDivergenceError, FlowStiffnessError, NumericalFailure
from .schemas import ResolventStatus, ResolventVerdict
from .vectorfield import CriticalSetSample, GradientLikeSystem

DEFAULT_GROWTH_THRESHOLD = float(np.log(1e6))

# Directions stop once their log-growth passes this multiple of the threshold
_GROWTH_OVERSHOOT = 1.25

# Verdicts whose weakest direction lands this close (relative) to the threshold are indeterminate
_INDETERMINATE_BAND = 0.1


class FlowIntegrator(BaseModel):
    """Tolerances for the adaptive Runge-Kutta 5(4) integrator."""

    model_config = ConfigDict(frozen=True)

    rtol: float = Field(default=1e-9, gt=0, description="Relative tolerance")
    atol: float = Field(default=1e-12, gt=0, description="Absolute tolerance")
    max_step: float = Field(default=np.inf, gt=0, description="Largest allowed step")
    norm_cap: float = Field(default=1e9, gt=0, description="State norm treated as blow-up")


_DEFAULT_INTEGRATOR = FlowIntegrator()


def _solve(rhs, y0: np.ndarray, t_end: float, integ: FlowIntegrator, cap_dims: int,
           events=(), t_eval=None):
    """Run solve_ivp on [0, t_end] and translate its failure modes."""
    all_events = list(events)
    if cap_dims:

        def norm_cap(t, y):
            return integ.norm_cap - np.linalg.norm(y[:cap_dims])

        norm_cap.terminal = True
        all_events.insert(0, norm_cap)

    sol = solve_ivp(
        rhs,
        (0.0, t_end),
        y0,
        method="RK45",
        rtol=integ.rtol,
        atol=integ.atol,
        max_step=integ.max_step,
        t_eval=t_eval,
        events=all_events or None,
    )
    if sol.status == -1:
        raise FlowStiffnessError(f"Integration failed at t={sol.t[-1]:.6g}: {sol.message}")
    if cap_dims and sol.t_events[0].size:
        raise FlowDivergenceError(
            f"Solution norm exceeded {integ.norm_cap:.1e} at t={sol.t_events[0][0]:.6g}"
        )
    return sol


def _flow_rhs(sys: GradientLikeSystem):
    def rhs(t, y):
        return np.asarray(sys.field(y), dtype=float)

    return rhs


def flow_map(
    sys: GradientLikeSystem, x, t: float, integ: FlowIntegrator | None = None
) -> np.ndarray:
    """Phi_t(x) for finite t of either sign.

    Raises:
        FlowDivergenceError: The solution norm passed integ.norm_cap
        FlowStiffnessError: The step size underflowed
    """
    integ = integ or _DEFAULT_INTEGRATOR
    x = np.asarray(x, dtype=float)
    if not np.isfinite(t):
        raise ValueError(f"Flow time must be finite, got {t}")
    if t == 0:
        return x.copy()
    sol = _solve(_flow_rhs(sys), x, float(t), integ, cap_dims=sys.dimension)
    return sol.y[:, -1].copy()


def flow_samples(
    sys: GradientLikeSystem, x, times, integ: FlowIntegrator | None = None
) -> np.ndarray:
    """The flow from x sampled on a monotone grid of times, shape (len(times), m).

    Times must all be >= 0 (ascending) or all <= 0 (descending).
    """
    integ = integ or _DEFAULT_INTEGRATOR
    x = np.asarray(x, dtype=float)
    times = np.asarray(times, dtype=float)
    if times.size == 0:
        return np.empty((0, sys.dimension))

    steps = np.diff(times)
    forward = times[-1] >= 0
    if forward and (np.any(times < 0) or np.any(steps < 0)):
        raise ValueError("Forward sample times must be nonnegative and ascending")
    if not forward and (np.any(times > 0) or np.any(steps > 0)):
        raise ValueError("Backward sample times must be nonpositive and descending")

    t_end = float(times[-1])
    if t_end == 0:
        return np.tile(x, (times.size, 1))
    sol = _solve(_flow_rhs(sys), x, t_end, integ, cap_dims=sys.dimension, t_eval=times)
    return sol.y.T.copy()


def lyapunov_decrease_check(
    sys: GradientLikeSystem,
    x,
    t_grid,
    integ: FlowIntegrator | None = None,
    equilibrium_tol: float = 1e-10,
) -> bool:
    """Whether V(Phi_t(x)) strictly decreases along t_grid.

    Increases smaller than the integrator tolerance are tolerated between grid
    points, but the last value must lie strictly below the first.

    Raises:
        ValueError: No Lyapunov potential, or x is an equilibrium
    """
    integ = integ or _DEFAULT_INTEGRATOR
    if sys.lyapunov is None:
        raise ValueError(f"System {sys.name} has no Lyapunov potential")
    x = np.asarray(x, dtype=float)
    residual = float(np.linalg.norm(sys.field(x)))
    if residual <= equilibrium_tol:
        raise ValueError(f"x = {x.tolist()} is an equilibrium of {sys.name} (|F| = {residual:.1e})")

    grid = np.unique(np.asarray(t_grid, dtype=float))
    if grid.size < 2 or grid[0] < 0:
        raise ValueError("t_grid needs at least two distinct nonnegative times")
    path = flow_samples(sys, x, grid, integ)
    values = np.array([sys.lyapunov.value(p) for p in path])

    slack = 10.0 * (integ.rtol * float(np.max(np.abs(values))) + integ.atol)
    return bool(np.all(np.diff(values) <= slack) and values[-1] < values[0])


def _variational_problem(
    sys: GradientLikeSystem, x, vectors, lam: float, freeze_tol: float
):
    """Right-hand side and initial state of dv/dt = DF(x)v - lam v.

    Returns (rhs, y0, offset) where the vectors live in y[offset:]. When x is an
    equilibrium within freeze_tol the base point is held fixed and offset is 0.
    """
    m = sys.dimension
    x = np.asarray(x, dtype=float)
    vectors = np.asarray(vectors, dtype=float).reshape(m, -1)
    k = vectors.shape[1]

    if float(np.linalg.norm(sys.field(x))) <= freeze_tol:
        shifted = np.asarray(sys.jacobian(x), dtype=float) - lam * np.eye(m)

        def frozen_rhs(t, y):
            return (shifted @ y.reshape(m, k)).ravel()

        return frozen_rhs, vectors.ravel(), 0

    def rhs(t, y):
        base = y[:m]
        v = y[m:].reshape(m, k)
        dv = np.asarray(sys.jacobian(base), dtype=float) @ v - lam * v
        return np.concatenate([np.asarray(sys.field(base), dtype=float), dv.ravel()])

    return rhs, np.concatenate([x, vectors.ravel()]), m


def variational_flow(
    sys: GradientLikeSystem,
    x,
    v,
    t: float,
    lam: float = 0.0,
    integ: FlowIntegrator | None = None,
    freeze_tol: float = 0.0,
) -> np.ndarray:
    """v(t) for the coupled system dx/dt = F(x), dv/dt = DF(x)v - lam v.

    Args:
        sys: System providing F and DF
        x: Base point x(0)
        v: Nonzero initial vector
        t: Final time (either sign)
        lam: Shift lambda
        integ: Integrator tolerances
        freeze_tol: Hold the base fixed when |F(x)| <= freeze_tol

    Returns:
        v(t)
    """
    integ = integ or _DEFAULT_INTEGRATOR
    v = np.asarray(v, dtype=float)
    if not np.any(v):
        raise ValueError("Initial variational vector must be nonzero")
    if t == 0:
        return v.copy()
    rhs, y0, offset = _variational_problem(sys, x, v, lam, freeze_tol)
    sol = _solve(rhs, y0, float(t), integ, cap_dims=offset)
    return sol.y[offset:, -1].copy()


def variational_matrix(
    sys: GradientLikeSystem,
    x,
    t: float,
    integ: FlowIntegrator | None = None,
    freeze_tol: float = 0.0,
) -> np.ndarray:
    """The derivative DPhi_t(x) as an m x m matrix."""
    integ = integ or _DEFAULT_INTEGRATOR
    m = sys.dimension
    if t == 0:
        return np.eye(m)
    rhs, y0, offset = _variational_problem(sys, x, np.eye(m), 0.0, freeze_tol)
    sol = _solve(rhs, y0, float(t), integ, cap_dims=offset)
    return sol.y[offset:, -1].reshape(m, m).copy()


def _direction_growth(
    sys: GradientLikeSystem,
    x: np.ndarray,
    v: np.ndarray,
    lam: float,
    t_max: float,
    threshold: float,
    integ: FlowIntegrator,
    freeze_tol: float,
) -> float:
    """Max of log|v(t)| over t in [-t_max, t_max], stopping early past the threshold."""
    target = _GROWTH_OVERSHOOT * threshold
    growth = 0.0
    for direction in (1.0, -1.0):
        rhs, y0, offset = _variational_problem(sys, x, v, lam, freeze_tol)

        def past_threshold(t, y, offset=offset):
            return np.log(max(float(np.linalg.norm(y[offset:])), 1e-300)) - target

        past_threshold.terminal = True
        past_threshold.direction = 1.0

        sol = _solve(
            rhs, y0, direction * t_max, integ, cap_dims=offset, events=[past_threshold]
        )
        norms = np.linalg.norm(sol.y[offset:], axis=0)
        growth = max(growth, float(np.log(max(norms.max(), 1e-300))))
        if growth >= target:
            break
    return growth


def resolvent_test(
    sys: GradientLikeSystem,
    C: CriticalSetSample,
    lam: float,
    T_max: float = 400.0,
    growth_threshold: float = DEFAULT_GROWTH_THRESHOLD,
    directions: int | None = None,
    seed: int = 0,
    integ: FlowIntegrator | None = None,
) -> ResolventVerdict:
    """Finite-horizon test of whether lam lies in the resolvent of C.

    Every sampled point is tested along the m coordinate axes and `directions`
    random unit vectors (default 2m). A direction is unbounded when log|v(t)| passes
    growth_threshold in either time direction; lam is in the resolvent when every
    direction is unbounded. The base point is frozen at each equilibrium.

    Args:
        sys: System providing DF
        C: Nonempty sample of equilibria
        lam: Shift lambda
        T_max: Horizon in each time direction
        growth_threshold: Log-growth treated as unbounded
        directions: Random directions per point (default 2m)
        seed: Seed for the random directions
        integ: Integrator tolerances

    Returns:
        ResolventVerdict, indeterminate near the threshold or on integrator failure
    """
    integ = integ or _DEFAULT_INTEGRATOR
    if len(C) == 0:
        raise ValueError("Critical set sample is empty")
    if growth_threshold <= 0:
        raise ValueError(f"growth_threshold must be positive, got {growth_threshold}")
    if T_max <= 0:
        raise ValueError(f"T_max must be positive, got {T_max}")

    m = sys.dimension
    n_random = 2 * m if directions is None else directions
    rng = np.random.default_rng(seed)

    growths: list[float] = []
    failures = 0
    for point in C.as_array():
        random_dirs = rng.standard_normal((n_random, m))
        random_dirs /= np.linalg.norm(random_dirs, axis=1, keepdims=True)
        for v in np.vstack([np.eye(m), random_dirs]):
            try:
                g = _direction_growth(
                    sys, point, v, lam, T_max, growth_threshold, integ, C.tolerance
                )
            except NumericalFailure as e:
                failures += 1
                logger.warning(f"Direction at {point.tolist()} failed: {e}")
                continue
            logger.debug(f"Growth at {point.tolist()} dir {v.round(3).tolist()}: growth {g:.3f}")
            growths.append(g)

    directions_used = len(growths) + failures
    witness = max(growths, default=0.0)
    weakest = min(growths, default=0.0)

    near_threshold = abs(weakest - growth_threshold) <= _INDETERMINATE_BAND * growth_threshold
    if failures or not growths or near_threshold:
        status = ResolventStatus.INDETERMINATE
        in_resolvent = None
    elif weakest > growth_threshold:
        status = ResolventStatus.IN_RESOLVENT
        in_resolvent = True
    else:
        status = ResolventStatus.IN_SPECTRUM
        in_resolvent = False

    return ResolventVerdict(
        lam=lam,
        status=status,
        in_resolvent=in_resolvent,
        witness_growth=witness,
        weakest_growth=weakest,
        growth_threshold=growth_threshold,
        directions_used=directions_used,
        t_max=T_max,
        failures=failures,
    )


def expansion_rate(
    sys: GradientLikeSystem,
    C: CriticalSetSample,
    T: float = 20.0,
    integ: FlowIntegrator | None = None,
) -> float:
    """-(1/T) log max_p |DPhi_{-T}(Phi_T(p))| over a sample of equilibria.

    At equilibria this approximates the smallest real part of the spectrum.
    """
    integ = integ or _DEFAULT_INTEGRATOR
    if len(C) == 0:
        raise ValueError("Critical set sample is empty")
    if T <= 0:
        raise ValueError(f"T must be positive, got {T}")

    worst = 0.0
    for point in C.as_array():
        residual = float(np.linalg.norm(sys.field(point)))
        if residual > C.tolerance:
            raise ValueError(f"{point.tolist()} is not an equilibrium (|F| = {residual:.1e})")
        image = flow_map(sys, point, T, integ)
        backward = variational_matrix(sys, image, -T, integ, freeze_tol=C.tolerance)
        worst = max(worst, float(np.linalg.norm(backward, 2)))
    return -float(np.log(worst)) / T


def expansion_gap_condition(error_rate: float, expansion: float) -> bool:
    """Whether error_rate < min(0, expansion).

    When it holds, ]error_rate, 0[ meets the resolvent, since the left edge of the
    spectrum equals the expansion rate.
    """
    return bool(error_rate < min(0.0, expansion))
