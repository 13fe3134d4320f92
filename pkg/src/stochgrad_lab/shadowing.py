"""Weighted sequence norms, pseudo-orbits and numerical shadowing."""

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy import optimize, stats

from .apt import InterpolatedPath
from .errors import NormOverflowError, NumericalFailure
from .flow import FlowIntegrator, flow_map, flow_samples
from .schemas import ShadowDecayFit, ShadowResult
from .stochastic import make_rng
from .vectorfield import GradientLikeSystem

DEFAULT_RESTARTS = 8
DISTANCE_FLOOR = 1e-12

_DEFAULT_INTEGRATOR = FlowIntegrator()


class PseudoOrbit(BaseModel):
    """Finite sequence xi_0..xi_K sampled from a path at unit time steps."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    xi: np.ndarray = Field(..., description="Points xi_k, shape (K + 1, m)")
    mu: float = Field(..., lt=0, description="Exponent mu < 0; the weight is r = exp(-mu)")
    origin_time: float = Field(default=0.0, description="Time T with xi_k = X(T + k)")

    @model_validator(mode="after")
    def check_sequence(self) -> "PseudoOrbit":
        """Points must form a finite 2-D array."""
        if self.xi.ndim != 2 or self.xi.shape[0] < 1:
            raise ValueError("xi must have shape (K + 1, m) with K >= 0")
        if not np.all(np.isfinite(self.xi)):
            raise ValueError("xi contains non-finite values")
        return self

    @property
    def r(self) -> float:
        return float(np.exp(-self.mu))

    @property
    def length(self) -> int:
        """K, the index of the last point."""
        return self.xi.shape[0] - 1


def pseudo_orbit_from_path(X: InterpolatedPath, T: float, K: int, mu: float) -> PseudoOrbit:
    """xi_k = X(T + k) for k = 0..K."""
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if T < X.start or T + K > X.end:
        raise ValueError(f"[{T}, {T + K}] outside path domain [{X.start:.6g}, {X.end:.6g}]")
    return PseudoOrbit(xi=X(T + np.arange(K + 1, dtype=float)), mu=mu, origin_time=T)


def r_norm(seq, r: float) -> float:
    """sum_k r^k |seq_k| with Euclidean norms.

    Raises:
        NormOverflowError: A weighted term is not representable
    """
    if r <= 0:
        raise ValueError(f"Weight r must be positive, got {r}")
    seq = np.asarray(seq, dtype=float)
    if seq.size == 0:
        return 0.0
    norms = np.linalg.norm(seq.reshape(seq.shape[0], -1), axis=1)
    with np.errstate(over="ignore", invalid="ignore"):
        weights = r ** np.arange(norms.size, dtype=float)
        terms = np.where(norms > 0, weights * norms, 0.0)
        total = float(np.sum(terms))
    if not np.isfinite(total):
        raise NormOverflowError(f"r-norm overflow with r={r:g} over {norms.size} terms")
    return total


def defect_sequence(
    sys: GradientLikeSystem, po: PseudoOrbit, integ: FlowIntegrator | None = None
) -> np.ndarray:
    """g_k = xi_{k+1} - Phi_1(xi_k) for k = 0..K-1."""
    integ = integ or _DEFAULT_INTEGRATOR
    images = np.array([flow_map(sys, p, 1.0, integ) for p in po.xi[:-1]])
    return po.xi[1:] - images.reshape(po.length, -1)


def shadow_sequence(
    sys: GradientLikeSystem, x, po: PseudoOrbit, integ: FlowIntegrator | None = None
) -> np.ndarray:
    """h_k = Phi_k(x) - xi_k for k = 0..K."""
    integ = integ or _DEFAULT_INTEGRATOR
    orbit = flow_samples(sys, x, np.arange(po.length + 1, dtype=float), integ)
    return orbit - po.xi


def find_shadow(
    sys: GradientLikeSystem,
    po: PseudoOrbit,
    guess=None,
    restarts: int = DEFAULT_RESTARTS,
    seed: int = 0,
    integ: FlowIntegrator | None = None,
    xatol: float = 1e-10,
    fatol: float = 1e-14,
    max_iter: int = 4000,
) -> ShadowResult:
    """Minimize x -> |h(x, xi)|_r by Nelder-Mead from the guess and perturbed restarts.

    The best run is the one with the lowest objective, ties going to the lower
    restart index; index 0 starts at the guess itself.

    Args:
        sys: System whose flow shadows xi
        po: Pseudo-orbit with weight r = exp(-mu)
        guess: Starting point (default xi_0)
        restarts: Number of perturbed restarts besides the guess
        seed: Seed of the perturbations
        integ: Integrator tolerances
        xatol: Simplex size tolerance
        fatol: Objective tolerance
        max_iter: Iteration cap per run

    Returns:
        ShadowResult with g and h norms and a convergence flag
    """
    integ = integ or _DEFAULT_INTEGRATOR
    r = po.r
    g_norm = r_norm(defect_sequence(sys, po, integ), r)
    guess = po.xi[0].copy() if guess is None else np.asarray(guess, dtype=float)

    def objective(x: np.ndarray) -> float:
        try:
            return r_norm(shadow_sequence(sys, x, po, integ), r)
        except NumericalFailure:
            return np.inf

    guess_h = objective(guess)
    rng = make_rng(seed)
    scale = 1e-2 * (1.0 + float(np.linalg.norm(guess)))
    starts = [guess] + [guess + scale * rng.standard_normal(guess.size) for _ in range(restarts)]

    results = []
    for index, start in enumerate(starts):
        res = optimize.minimize(
            objective,
            start,
            method="Nelder-Mead",
            options={"xatol": xatol, "fatol": fatol, "maxiter": max_iter},
        )
        logger.debug(f"Restart {index}: h = {res.fun:.3e}, success={res.success}")
        results.append((float(res.fun), index, np.asarray(res.x), bool(res.success)))

    h_norm, best_index, x_star, converged = min(results, key=lambda item: (item[0], item[1]))
    if h_norm > guess_h:
        h_norm, x_star, converged = guess_h, guess, False
    if not converged:
        logger.warning(f"Shadow search did not converge (best restart {best_index})")

    return ShadowResult(
        x_star=x_star.tolist(),
        g_norm=g_norm,
        h_norm=h_norm,
        ratio=h_norm / g_norm if g_norm > 0 else float("inf"),
        guess_h_norm=guess_h,
        r=r,
        tail_weight=float(r**po.length),
        restarts=restarts,
        converged=converged,
    )


def shadow_decay_check(
    sys: GradientLikeSystem,
    X: InterpolatedPath,
    x_star,
    T: float,
    mu: float,
    K: int,
    integ: FlowIntegrator | None = None,
    slope_tol: float = 0.05,
) -> ShadowDecayFit:
    """Slope of log |X(T + k) - Phi_k(x_star)| against k = 0..K.

    The fit stops at the first distance below the noise floor
    max(1e-12, 100 (rtol |X| + atol)); with fewer than 3 points left it is skipped.
    """
    integ = integ or _DEFAULT_INTEGRATOR
    if mu >= 0:
        raise ValueError(f"mu must be negative, got {mu}")
    ks = np.arange(K + 1, dtype=float)
    path = X(T + ks)
    orbit = flow_samples(sys, x_star, ks, integ)
    distances = np.linalg.norm(path - orbit, axis=1)

    scale = float(np.max(np.linalg.norm(path, axis=1)))
    noise_floor = max(DISTANCE_FLOOR, 100.0 * (integ.rtol * scale + integ.atol))
    below = np.flatnonzero(distances <= noise_floor)
    usable = int(below[0]) if below.size else distances.size

    if usable < 3:
        logger.debug(f"Shadow decay fit skipped: {usable} distances above {noise_floor:.1e}")
        return ShadowDecayFit(
            slope=None,
            mu=mu,
            distances=distances.tolist(),
            points_used=usable,
            noise_floor=noise_floor,
            shadows=usable == 0,
        )

    slope = float(stats.linregress(ks[:usable], np.log(distances[:usable])).slope)
    return ShadowDecayFit(
        slope=slope,
        mu=mu,
        distances=distances.tolist(),
        points_used=usable,
        noise_floor=noise_floor,
        shadows=slope <= mu + slope_tol,
    )
