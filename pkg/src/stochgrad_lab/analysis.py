"""Lojasiewicz and angle estimates, rate fits, repulsion and distribution experiments."""

import numpy as np
from loguru import logger
from scipy import linalg, stats
from scipy.spatial import cKDTree

from .batch import run_batch
from .errors import EstimationError
from .flow import FlowIntegrator, flow_samples
from .schemas import (
    AngleEstimate,
    DiscreteRateFit,
    DistributionTestResult,
    ExcitationEstimate,
    FlowRateFit,
    LojasiewiczEstimate,
    MartingaleCheck,
    RateModel,
    RepulsionReport,
    SpectrumReport,
    SpectrumSource,
)
from .spectrum import gap_infimum, linear_instability_check
from .stochastic import (
    NoiseModel,
    StepSchedule,
    Trajectory,
    make_rng,
    polya_urn,
    run_robbins_monro,
)
from .vectorfield import CriticalSetSample, GradientLikeSystem, Potential, locate_critical_points

GRADIENT_FLOOR = 1e-12
VALUE_FLOOR = 1e-14
RELIABLE_R2 = 0.9
ANGLE_FLOOR = 1e-6
MIN_RATE_POINTS = 5


def _ball_samples(rng: np.random.Generator, center: np.ndarray, radius: float, count: int):
    """Uniform samples in the closed ball B(center, radius)."""
    m = center.size
    directions = rng.standard_normal((count, m))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    radii = radius * rng.random(count) ** (1.0 / m)
    return center + radii[:, None] * directions


def _check_rays(V: Potential, p: np.ndarray, radius: float, rng: np.random.Generator) -> None:
    """Warn when |V - V(p)| is not monotone along rays from p."""
    v0 = V.value(p)
    steps = np.linspace(0.0, radius, 21)[1:]
    for direction in rng.standard_normal((8, p.size)):
        direction /= np.linalg.norm(direction)
        gaps = np.array([abs(V.value(p + s * direction) - v0) for s in steps])
        if np.any(np.diff(gaps) < -1e-14):
            logger.warning(
                f"|V - V(p)| not monotone on rays within radius {radius:g}; "
                "another critical value may interfere"
            )
            return


def estimate_lojasiewicz(
    V: Potential,
    p,
    radius: float = 0.1,
    samples: int = 2000,
    seed: int = 0,
    critical_tol: float = 1e-6,
) -> LojasiewiczEstimate:
    """Fit the exponent theta in |V(x) - V(p)|^(1 - theta) <= c0 |grad V(x)| near p.

    Fits log|grad V| = (1 - theta) log|V - V(p)| + const on uniform ball samples,
    clamps theta to (0, 1/2], then inflates c0 until the inequality holds on
    every sample used.

    Raises:
        ValueError: p is not critical
        EstimationError: Fewer than two non-degenerate samples
    """
    p = np.asarray(p, dtype=float)
    grad_norm = float(np.linalg.norm(V.gradient(p)))
    if grad_norm > critical_tol:
        raise ValueError(f"p = {p.tolist()} is not critical: |grad V| = {grad_norm:.3e}")

    rng = make_rng(seed)
    _check_rays(V, p, radius, rng)
    points = _ball_samples(rng, p, radius, samples)
    v0 = V.value(p)
    grads = np.array([np.linalg.norm(V.gradient(x)) for x in points])
    gaps = np.array([abs(V.value(x) - v0) for x in points])
    keep = (grads >= GRADIENT_FLOOR) & (gaps >= VALUE_FLOOR)
    if np.sum(keep) < 2:
        raise EstimationError(f"Only {int(np.sum(keep))} non-degenerate samples near {p.tolist()}")
    grads, gaps = grads[keep], gaps[keep]

    fit = stats.linregress(np.log(gaps), np.log(grads))
    theta_raw = 1.0 - float(fit.slope)
    theta = min(max(theta_raw, 1e-6), 0.5)
    c0_fit = float(np.exp(-fit.intercept))
    c0 = float(np.max(gaps ** (1.0 - theta) / grads))
    r_squared = float(fit.rvalue**2)
    reliable = r_squared >= RELIABLE_R2
    if not reliable:
        logger.warning(f"Unreliable Lojasiewicz fit at {p.tolist()}: R^2 = {r_squared:.3f}")

    return LojasiewiczEstimate(
        point=p.tolist(),
        theta_hat=theta,
        theta_raw=theta_raw,
        c0_hat=c0,
        eps_fit=max(0.0, c0 / c0_fit - 1.0),
        radius=radius,
        samples_requested=samples,
        samples_used=int(grads.size),
        r_squared=r_squared,
        reliable=reliable,
    )


def check_angle(
    sys: GradientLikeSystem,
    p,
    radius: float = 0.1,
    samples: int = 2000,
    seed: int = 0,
) -> AngleEstimate:
    """Minimal angle constants between grad V and F on ball samples around p.

    c1_hat = min |<grad V, F>| / (|grad V| |F|) and
    beta_angle_hat = min |<grad V, F>| / |grad V|^2.
    """
    if sys.lyapunov is None:
        raise ValueError(f"System {sys.name} has no Lyapunov potential")
    p = np.asarray(p, dtype=float)
    points = _ball_samples(make_rng(seed), p, radius, samples)

    cosines, betas = [], []
    for x in points:
        g = np.asarray(sys.lyapunov.gradient(x), dtype=float)
        f = np.asarray(sys.field(x), dtype=float)
        g_norm, f_norm = float(np.linalg.norm(g)), float(np.linalg.norm(f))
        if g_norm < GRADIENT_FLOOR or f_norm < GRADIENT_FLOOR:
            continue
        inner = abs(float(g @ f))
        cosines.append(inner / (g_norm * f_norm))
        betas.append(inner / g_norm**2)
    if not cosines:
        raise EstimationError(f"No valid angle samples near {p.tolist()}")

    c1 = min(min(cosines), 1.0)
    holds = c1 > ANGLE_FLOOR
    if not holds:
        logger.warning(f"Angle condition fails for {sys.name} near {p.tolist()}: c1 = {c1:.2e}")
    return AngleEstimate(
        c1_hat=c1, beta_angle_hat=min(betas), samples_used=len(cosines), holds=holds
    )


def _fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    result = stats.linregress(x, y)
    return float(result.slope), float(result.rvalue**2)


def fit_flow_rate(
    sys: GradientLikeSystem,
    x0,
    t_grid,
    limit_point=None,
    integ: FlowIntegrator | None = None,
    newton_tol: float = 1e-13,
) -> FlowRateFit:
    """Exponential vs power-law fit of d(t) = |Phi_t(x0) - p|.

    Fits log d against t and against log t and keeps the model with the larger
    R^2. Without a limit point, p is the Newton refinement of the last sample.

    Raises:
        EstimationError: The trajectory does not settle (distances not decreasing
            over the later half of the grid) or too few positive distances
    """
    times = np.asarray(t_grid, dtype=float)
    if times.size < MIN_RATE_POINTS or np.any(times <= 0) or np.any(np.diff(times) <= 0):
        raise ValueError("t_grid needs at least 5 increasing positive times")
    path = flow_samples(sys, x0, np.concatenate([[0.0], times]), integ)[1:]

    if limit_point is None:
        located = locate_critical_points(sys, [path[-1]], tol=newton_tol)
        if len(located) == 0:
            raise EstimationError(f"Flow from {np.asarray(x0).tolist()} has no nearby limit")
        limit = located.as_array()[0]
    else:
        limit = np.asarray(limit_point, dtype=float)

    distances = np.linalg.norm(path - limit, axis=1)
    later = distances[distances.size // 2 :]
    if np.any(np.diff(later) >= 0) or distances[-1] >= distances[0]:
        raise EstimationError(f"Flow from {np.asarray(x0).tolist()} does not converge to {limit}")
    keep = distances > GRADIENT_FLOOR
    if np.sum(keep) < MIN_RATE_POINTS:
        raise EstimationError("Too few distances above the numerical floor")
    t, log_d = times[keep], np.log(distances[keep])

    exp_slope, exp_r2 = _fit(t, log_d)
    pow_slope, pow_r2 = _fit(np.log(t), log_d)
    kind = RateModel.EXPONENTIAL if exp_r2 >= pow_r2 else RateModel.POWER
    return FlowRateFit(
        kind=kind,
        exponent=exp_slope if kind is RateModel.EXPONENTIAL else pow_slope,
        exponential_exponent=exp_slope,
        exponential_r_squared=exp_r2,
        power_exponent=pow_slope,
        power_r_squared=pow_r2,
        limit_point=limit.tolist(),
    )


def fit_discrete_log_rate(
    traj: Trajectory,
    x_inf=None,
    n_grid=None,
    tail_fraction: float = 0.01,
) -> DiscreteRateFit:
    """Fit |x_n - x_inf| against log log n; c_hat is minus the slope.

    x_inf defaults to the mean of the final 1% of stored iterates. The grid is
    cut at the first distance below three tail standard deviations. A fit of
    log distance against log n with a better R^2 and a clearly negative slope
    marks the decay as super-logarithmic.

    Raises:
        EstimationError: Fewer than 5 points above the noise floor
    """
    tail = traj.states[-max(1, int(np.ceil(tail_fraction * len(traj)))) :]
    limit = tail.mean(axis=0) if x_inf is None else np.asarray(x_inf, dtype=float)
    noise_floor = 3.0 * float(np.std(np.linalg.norm(tail - tail.mean(axis=0), axis=1)))

    stored = traj.indices
    if n_grid is None:
        candidates = stored[stored >= 3]
        if candidates.size < MIN_RATE_POINTS:
            raise EstimationError(f"Only {candidates.size} stored iterates with n >= 3")
        picks = np.unique(np.geomspace(1, candidates.size, 200).astype(int) - 1)
        positions = np.searchsorted(stored, candidates[picks])
    else:
        requested = np.asarray(n_grid, dtype=np.int64)
        positions = np.unique(np.clip(np.searchsorted(stored, requested), 0, stored.size - 1))
        positions = positions[stored[positions] >= 3]

    n = stored[positions].astype(float)
    distances = np.linalg.norm(traj.states[positions] - limit, axis=1)
    below = np.flatnonzero(distances <= max(noise_floor, GRADIENT_FLOOR))
    cut = int(below[0]) if below.size else distances.size
    if cut < distances.size:
        logger.debug(f"Rate fit window shrunk to n <= {int(n[cut - 1]) if cut else 0}")
    n, distances = n[:cut], distances[:cut]
    if n.size < MIN_RATE_POINTS:
        raise EstimationError(f"Only {n.size} distances above the noise floor {noise_floor:.2e}")

    log_d = np.log(distances)
    slope, r2 = _fit(np.log(np.log(n)), log_d)
    power_slope, power_r2 = _fit(np.log(n), log_d)
    return DiscreteRateFit(
        c_hat=-slope,
        r_squared=r2,
        points_used=int(n.size),
        x_inf=limit.tolist(),
        noise_floor=noise_floor,
        power_slope=power_slope,
        power_r_squared=power_r2,
        super_logarithmic=bool(power_r2 > r2 and power_slope < -0.05),
    )


def _run_escape(inside: np.ndarray, indices: np.ndarray) -> tuple[int | None, int]:
    """First exit index and number of re-entries from an inside/outside mask."""
    outside = np.flatnonzero(~inside)
    if outside.size == 0:
        return None, 0
    first = int(outside[0])
    after = inside[first:].astype(np.int8)
    reentries = int(np.sum(np.diff(after) == 1))
    return int(indices[first]), reentries


def repulsion_experiment(
    sys: GradientLikeSystem,
    C: CriticalSetSample,
    radius: float,
    sched: StepSchedule,
    noise: NoiseModel,
    runs: int,
    N: int,
    seed: int,
    start_mode: str = "uniform",
    threads: int = 1,
    show_progress: bool = False,
) -> RepulsionReport:
    """Escape statistics of Robbins-Monro runs started inside U = radius-neighborhood of C.

    In `uniform` mode each run starts at a uniform point of the ball around a
    randomly chosen sample point; in `on_set` mode it starts on the sample
    itself. Exits are detected on stored iterates (every iterate when N <= 10^6).
    Violated preconditions (no noise excitation, C not linearly unstable) are
    reported as warnings only.
    """
    if start_mode not in ("uniform", "on_set"):
        raise ValueError(f"start_mode must be 'uniform' or 'on_set', got {start_mode!r}")
    if len(C) == 0:
        raise ValueError("Critical set sample is empty")
    if radius <= 0:
        raise ValueError(f"radius must be positive, got {radius}")

    if noise.covariance_floor <= 0:
        logger.warning("Noise has no covariance floor; escape is not expected")
    _, unstable = linear_instability_check(sys, C, SpectrumSource.JACOBIAN)
    if not unstable:
        logger.warning(f"'{C.connected_label}' is not linearly unstable for {sys.name}")

    centers = C.as_array()
    tree = cKDTree(centers)
    stride = 1 if N <= 1_000_000 else None

    def one_run(run_index: int):
        if start_mode == "on_set":
            x0 = centers[run_index % len(centers)]
        else:
            start_rng = make_rng(seed, run_index, stream=1)
            center = centers[start_rng.integers(len(centers))]
            x0 = _ball_samples(start_rng, center, radius, 1)[0]
        traj = run_robbins_monro(sys, x0, sched, noise, N, seed, run_index, stride=stride)
        distances, _ = tree.query(traj.states)
        inside = distances <= radius
        exit_index, reentries = _run_escape(inside, traj.indices)
        logger.debug(f"Run {run_index}: exit at {exit_index}, {reentries} re-entries")
        return exit_index, reentries, bool(inside[-1]), traj.final.tolist()

    results = run_batch(one_run, runs, threads, desc="Repulsion runs", show_progress=show_progress)

    escape_times: list[int | None] = []
    finals: list[list[float]] = []
    failed, reentries, ends_inside = [], 0, 0
    for index, result in enumerate(results):
        if result is None:
            failed.append(index)
            escape_times.append(None)
            continue
        exit_index, count, inside_at_end, final = result
        escape_times.append(exit_index)
        reentries += count
        ends_inside += inside_at_end
        finals.append(final)

    escaped = sum(t is not None for t in escape_times)
    logger.info(f"Escape fraction {escaped}/{runs} from '{C.connected_label}'")
    return RepulsionReport(
        centers=centers.tolist(),
        radius=radius,
        runs=runs,
        steps=N,
        start_mode=start_mode,
        escape_fraction=escaped / runs,
        escape_times=escape_times,
        returns_after_escape=reentries,
        ends_inside=ends_inside,
        non_escapes=[i for i, t in enumerate(escape_times) if t is None and i not in failed],
        failed_runs=failed,
        final_points=finals,
    )


def distribution_test(samples) -> DistributionTestResult:
    """Two-sided Kolmogorov-Smirnov test of samples against Uniform[0, 1]."""
    samples = np.asarray(samples, dtype=float)
    if samples.size < 100:
        raise ValueError(f"distribution_test needs at least 100 samples, got {samples.size}")
    result = stats.kstest(samples, "uniform")
    return DistributionTestResult(
        statistic=float(result.statistic), pvalue=float(result.pvalue), samples=samples.size
    )


def martingale_increment_test(
    runs: int, n: int, seed: int, threads: int = 1, show_progress: bool = False
) -> MartingaleCheck:
    """Mean of the Polya increment x_{n+1} - x_n over independent urns, within 3 SE of 0."""
    if runs < 2:
        raise ValueError("Need at least two runs")

    def increment(run_index: int) -> float:
        traj = polya_urn(n + 1, seed, run_index, stride=n + 1, tail_window=2)
        return float(traj.states[-1, 0] - traj.states[-2, 0])

    values = np.array(run_batch(increment, runs, threads, "Martingale check", show_progress))
    mean = float(values.mean())
    se = float(values.std(ddof=1) / np.sqrt(runs))
    return MartingaleCheck(
        step=n, runs=runs, mean_increment=mean, standard_error=se, passes=abs(mean) <= 3.0 * se
    )


def predicted_rate_constant(
    loj: LojasiewiczEstimate,
    beta_angle: float,
    e_hat: float | None,
    report: SpectrumReport | None,
) -> float:
    """c = max(-beta / (2 c0^2), inf of ]e(X), 0[ within the resolvent).

    The second term is skipped without an error rate below 0 or a spectrum.
    """
    if loj.c0_hat <= 0:
        raise ValueError("c0_hat must be positive")
    c = -beta_angle / (2.0 * loj.c0_hat**2)
    if e_hat is not None and e_hat < 0 and report is not None:
        gap = gap_infimum(report, e_hat)
        if gap is not None:
            c = max(c, gap)
    return c


def unstable_noise_excitation(
    sys: GradientLikeSystem,
    p,
    noise: NoiseModel,
    samples: int = 10_000,
    seed: int = 0,
) -> ExcitationEstimate:
    """E|U^u| where U^u projects the noise at p onto the unstable eigenspace of DF(p)."""
    p = np.asarray(p, dtype=float)
    eigenvalues, vectors = linalg.eig(np.asarray(sys.jacobian(p), dtype=float))
    unstable = np.flatnonzero(eigenvalues.real > 1e-8)
    draws = noise.sample(make_rng(seed), samples, sys.dimension, x=p)
    if unstable.size == 0:
        return ExcitationEstimate(
            point=p.tolist(), unstable_dimension=0, mean_unstable_norm=0.0, samples=samples
        )
    projector = (vectors[:, unstable] @ linalg.inv(vectors)[unstable, :]).real
    norms = np.linalg.norm(draws @ projector.T, axis=1)
    return ExcitationEstimate(
        point=p.tolist(),
        unstable_dimension=int(unstable.size),
        mean_unstable_norm=float(norms.mean()),
        samples=samples,
    )
