"""Potentials, gradient-like vector fields and the catalog of analytic test systems.

Catalog systems carry exact closed-form derivatives. Finite differences are only
used for value-only user potentials (and as oracles in the tests).
"""

from collections.abc import Callable, Sequence

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, field_validator

ScalarFn = Callable[[np.ndarray], float]
ArrayFn = Callable[[np.ndarray], np.ndarray]

FD_STEP = 1e-5

# Newton steps through matrices worse conditioned than this fall back to damped descent
_COND_LIMIT = 1e14

_J = np.array([[0.0, -1.0], [1.0, 0.0]])


def finite_difference_gradient(value: ScalarFn, x, step: float = FD_STEP) -> np.ndarray:
    """Centered finite-difference gradient of a scalar function."""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = step
        grad[i] = (value(x + e) - value(x - e)) / (2.0 * step)
    return grad


def finite_difference_jacobian(func: ArrayFn, x, step: float = FD_STEP) -> np.ndarray:
    """Centered finite-difference Jacobian of a map R^m -> R^m."""
    x = np.asarray(x, dtype=float)
    m = x.size
    jac = np.empty((m, m))
    for j in range(m):
        e = np.zeros_like(x)
        e[j] = step
        jac[:, j] = (np.asarray(func(x + e)) - np.asarray(func(x - e))) / (2.0 * step)
    return jac


class Potential(BaseModel):
    """Smooth potential V : R^m -> R with gradient and Hessian."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    name: str = Field(..., description="Human-readable identifier, e.g. 'circle'")
    dimension: int = Field(..., ge=1, description="Ambient dimension m")
    value: ScalarFn = Field(..., description="x -> V(x)")
    gradient: ArrayFn = Field(..., description="x -> grad V(x)")
    hessian: ArrayFn = Field(..., description="x -> D^2 V(x), symmetric m x m")
    analytic_flag: bool = Field(default=False, description="Whether V is real analytic")
    finite_difference: bool = Field(
        default=False, description="Derivatives come from finite differences (value-only mode)"
    )
    params: tuple[float, ...] = Field(default=(), description="Catalog parameters")
    kernel: str | None = Field(default=None, description="Compiled gradient field, if any")

    @classmethod
    def from_value(
        cls,
        name: str,
        dimension: int,
        value: ScalarFn,
        step: float = FD_STEP,
        analytic_flag: bool = False,
    ) -> "Potential":
        """Build a potential from its values only.

        Gradient and Hessian default to centered finite differences with the given
        step. Such potentials are fine for exploration but too noisy for rate fits.

        Args:
            name: Identifier for logs and reports
            dimension: Ambient dimension m
            value: Callable x -> V(x)
            step: Finite-difference step
            analytic_flag: Whether the caller vouches for analyticity

        Returns:
            Potential in finite-difference mode
        """

        def gradient(x):
            return finite_difference_gradient(value, x, step)

        def hessian(x):
            h = finite_difference_jacobian(gradient, x, step)
            return 0.5 * (h + h.T)

        return cls(
            name=name,
            dimension=dimension,
            value=value,
            gradient=gradient,
            hessian=hessian,
            analytic_flag=analytic_flag,
            finite_difference=True,
        )


class GradientLikeSystem(BaseModel):
    """Vector field F with its Jacobian and an optional strict Lyapunov potential."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    name: str = Field(..., description="Catalog name or user label")
    dimension: int = Field(..., ge=1, description="Ambient dimension m")
    field: ArrayFn = Field(..., description="x -> F(x)")
    jacobian: ArrayFn = Field(..., description="x -> DF(x)")
    lyapunov: Potential | None = Field(default=None, description="Strict Lyapunov function V")
    pure_gradient_flag: bool = Field(default=False, description="F = -grad V exactly")
    params: tuple[float, ...] = Field(default=(), description="Catalog parameters")
    kernel: str | None = Field(default=None, description="Compiled field, if any")


class CriticalSetSample(BaseModel):
    """Finite sample of a (connected) set of equilibria."""

    points: list[list[float]] = Field(default_factory=list, description="Sampled points")
    tolerance: float = Field(..., gt=0, description="Max allowed |F| at each point")
    connected_label: str = Field(default="", description="Tag of the connected component")
    dropped_seeds: list[list[float]] = Field(
        default_factory=list, description="Seeds that failed to converge"
    )

    @field_validator("points")
    @classmethod
    def validate_points(cls, v: list[list[float]]) -> list[list[float]]:
        """All points must share one dimension."""
        if v and len({len(p) for p in v}) != 1:
            raise ValueError("All critical points must have the same dimension")
        return v

    @classmethod
    def from_points(
        cls, sys: GradientLikeSystem, points, tolerance: float, label: str = ""
    ) -> "CriticalSetSample":
        """Build a sample after checking |F(p)| <= tolerance at every point."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        for p in pts:
            residual = float(np.linalg.norm(sys.field(p)))
            if residual > tolerance:
                raise ValueError(
                    f"Point {p.tolist()} is not an equilibrium of {sys.name}: "
                    f"|F| = {residual:.3e} > {tolerance:.1e}"
                )
        return cls(points=pts.tolist(), tolerance=tolerance, connected_label=label)

    def as_array(self) -> np.ndarray:
        """Points as an (n, m) array."""
        return np.asarray(self.points, dtype=float)

    def __len__(self) -> int:
        return len(self.points)


def gradient_system(potential: Potential) -> GradientLikeSystem:
    """Wrap a potential as the pure gradient system F = -grad V."""

    def field(x):
        return -np.asarray(potential.gradient(x), dtype=float)

    def jacobian(x):
        return -np.asarray(potential.hessian(x), dtype=float)

    return GradientLikeSystem(
        name=potential.name,
        dimension=potential.dimension,
        field=field,
        jacobian=jacobian,
        lyapunov=potential,
        pure_gradient_flag=True,
        params=potential.params,
        kernel=potential.kernel,
    )


def scale_potential(potential: Potential, factor: float) -> Potential:
    """Return factor * V with matching derivatives."""
    if factor == 0:
        raise ValueError("Scale factor must be nonzero")
    return Potential(
        name=f"{factor:g}*{potential.name}",
        dimension=potential.dimension,
        value=lambda x: factor * potential.value(x),
        gradient=lambda x: factor * np.asarray(potential.gradient(x)),
        hessian=lambda x: factor * np.asarray(potential.hessian(x)),
        analytic_flag=potential.analytic_flag,
        finite_difference=potential.finite_difference,
    )


# Catalog ==============================================================================


def _quadratic(params: tuple[float, ...], dim: int | None) -> GradientLikeSystem:
    if len(params) > 1:
        raise ValueError(f"quadratic takes one parameter (lambda), got {len(params)}")
    lam = params[0] if params else 1.0
    if lam <= 0:
        raise ValueError(f"quadratic requires lambda > 0, got {lam}")
    m = dim or 1

    def value(x):
        x = np.asarray(x, dtype=float)
        return 0.5 * lam * float(x @ x)

    def gradient(x):
        return lam * np.asarray(x, dtype=float)

    def hessian(x):
        return lam * np.eye(m)

    potential = Potential(
        name=f"quadratic({lam:g})",
        dimension=m,
        value=value,
        gradient=gradient,
        hessian=hessian,
        analytic_flag=True,
        params=(lam,),
        kernel="quadratic",
    )
    return gradient_system(potential)


def _quartic(params: tuple[float, ...], dim: int | None) -> GradientLikeSystem:
    if params:
        raise ValueError("quartic takes no parameters")
    m = dim or 1

    def value(x):
        x = np.asarray(x, dtype=float)
        s = float(x @ x)
        return 0.25 * s * s

    def gradient(x):
        x = np.asarray(x, dtype=float)
        return float(x @ x) * x

    def hessian(x):
        x = np.asarray(x, dtype=float)
        return float(x @ x) * np.eye(m) + 2.0 * np.outer(x, x)

    potential = Potential(
        name="quartic", dimension=m, value=value, gradient=gradient, hessian=hessian,
        analytic_flag=True, kernel="quartic",
    )
    return gradient_system(potential)


def _require_planar(name: str, dim: int | None) -> None:
    if dim not in (None, 2):
        raise ValueError(f"{name} is only defined for m = 2, got dim={dim}")


def _circle(params: tuple[float, ...], dim: int | None) -> GradientLikeSystem:
    if params:
        raise ValueError("circle takes no parameters")
    _require_planar("circle", dim)

    def value(x):
        x = np.asarray(x, dtype=float)
        s = float(x @ x) - 1.0
        return 0.25 * s * s

    def gradient(x):
        x = np.asarray(x, dtype=float)
        return (float(x @ x) - 1.0) * x

    def hessian(x):
        x = np.asarray(x, dtype=float)
        return (float(x @ x) - 1.0) * np.eye(2) + 2.0 * np.outer(x, x)

    potential = Potential(
        name="circle", dimension=2, value=value, gradient=gradient, hessian=hessian,
        analytic_flag=True, kernel="circle",
    )
    return gradient_system(potential)


def _double_well(params: tuple[float, ...], dim: int | None) -> GradientLikeSystem:
    if params:
        raise ValueError("double_well takes no parameters")
    _require_planar("double_well", dim)

    def value(x):
        x = np.asarray(x, dtype=float)
        return 0.25 * (x[0] ** 2 - 1.0) ** 2 + 0.5 * x[1] ** 2

    def gradient(x):
        x = np.asarray(x, dtype=float)
        return np.array([(x[0] ** 2 - 1.0) * x[0], x[1]])

    def hessian(x):
        x = np.asarray(x, dtype=float)
        return np.diag([3.0 * x[0] ** 2 - 1.0, 1.0])

    potential = Potential(
        name="double_well", dimension=2, value=value, gradient=gradient, hessian=hessian,
        analytic_flag=True, kernel="double_well",
    )
    return gradient_system(potential)


def _ridge(params: tuple[float, ...], dim: int | None) -> GradientLikeSystem:
    if params:
        raise ValueError("ridge takes no parameters")
    _require_planar("ridge", dim)

    def value(x):
        x = np.asarray(x, dtype=float)
        return 0.25 * (x[0] ** 2 - 1.0) ** 2

    def gradient(x):
        x = np.asarray(x, dtype=float)
        return np.array([(x[0] ** 2 - 1.0) * x[0], 0.0])

    def hessian(x):
        x = np.asarray(x, dtype=float)
        return np.diag([3.0 * x[0] ** 2 - 1.0, 0.0])

    potential = Potential(
        name="ridge", dimension=2, value=value, gradient=gradient, hessian=hessian,
        analytic_flag=True, kernel="ridge",
    )
    return gradient_system(potential)


def _linear(params: tuple[float, ...], dim: int | None) -> GradientLikeSystem:
    rates = params or (1.0,)
    m = dim or len(rates)
    if len(rates) == 1:
        rates = rates * m
    if len(rates) != m:
        raise ValueError(f"linear got {len(rates)} rates for dimension {m}")
    a = np.asarray(rates, dtype=float)
    jac = -np.diag(a)

    def field(x):
        return -a * np.asarray(x, dtype=float)

    def jacobian(x):
        return jac.copy()

    label = ",".join(f"{r:g}" for r in rates)
    return GradientLikeSystem(
        name=f"linear({label})", dimension=m, field=field, jacobian=jacobian, params=tuple(rates),
        kernel="linear",
    )


def _polya_zero(params: tuple[float, ...], dim: int | None) -> GradientLikeSystem:
    if params:
        raise ValueError("polya_zero takes no parameters")
    if dim not in (None, 1):
        raise ValueError("polya_zero is one-dimensional")

    def field(x):
        return np.zeros(1)

    def jacobian(x):
        return np.zeros((1, 1))

    return GradientLikeSystem(
        name="polya_zero", dimension=1, field=field, jacobian=jacobian, kernel="zero"
    )


def _planar_energy() -> Potential:
    return _quadratic((1.0,), 2).lyapunov


def _swirl(params: tuple[float, ...], dim: int | None) -> GradientLikeSystem:
    _require_planar("swirl", dim)
    if len(params) > 1:
        raise ValueError("swirl takes one parameter (rho)")
    rho = params[0] if params else 1.0
    potential = _planar_energy()
    jac = -np.eye(2) + rho * _J

    def field(x):
        g = np.asarray(x, dtype=float)
        return -g + rho * (_J @ g)

    def jacobian(x):
        return jac.copy()

    return GradientLikeSystem(
        name=f"swirl({rho:g})", dimension=2, field=field, jacobian=jacobian,
        lyapunov=potential, params=(rho,), kernel="swirl",
    )


def _rotation(params: tuple[float, ...], dim: int | None) -> GradientLikeSystem:
    if params:
        raise ValueError("rotation takes no parameters")
    _require_planar("rotation", dim)

    def field(x):
        return _J @ np.asarray(x, dtype=float)

    def jacobian(x):
        return _J.copy()

    return GradientLikeSystem(
        name="rotation", dimension=2, field=field, jacobian=jacobian, lyapunov=_planar_energy(),
        kernel="rotation",
    )


_CATALOG: dict[str, Callable[[tuple[float, ...], int | None], GradientLikeSystem]] = {
    "quadratic": _quadratic,
    "quartic": _quartic,
    "circle": _circle,
    "double_well": _double_well,
    "ridge": _ridge,
    "linear": _linear,
    "polya_zero": _polya_zero,
    "swirl": _swirl,
    "rotation": _rotation,
}

CATALOG_NAMES = tuple(_CATALOG)

# Names whose systems carry a Lyapunov potential
POTENTIAL_SYSTEMS = ("quadratic", "quartic", "circle", "double_well", "ridge", "swirl", "rotation")


def catalog_system(
    name: str, params: Sequence[float] = (), dim: int | None = None
) -> GradientLikeSystem:
    """Build a named analytic test system.

    Args:
        name: One of CATALOG_NAMES
        params: Scalar parameters (quadratic: lambda; linear: rates; swirl: rho)
        dim: Ambient dimension for quadratic, quartic and linear (default 1)

    Returns:
        GradientLikeSystem with exact closed-form derivatives

    Raises:
        ValueError: Unknown name or parameter out of range
    """
    builder = _CATALOG.get(name)
    if builder is None:
        raise ValueError(
            f"Unknown catalog system '{name}'. Available: {', '.join(CATALOG_NAMES)}"
        )
    if dim is not None and dim < 1:
        raise ValueError(f"Dimension must be positive, got {dim}")
    return builder(tuple(float(p) for p in params), dim)


def _critical_labels(sys: GradientLikeSystem) -> tuple[str, ...]:
    base = sys.name.split("(")[0]
    return {
        "circle": ("unit_circle",),
        "double_well": ("saddle", "minimum_right", "minimum_left"),
        "ridge": ("ridge_line", "ridge_minima_right", "ridge_minima_left"),
        "polya_zero": ("interval",),
    }.get(base, ("origin",))


def catalog_critical_set(
    sys: GradientLikeSystem,
    label: str | None = None,
    n_points: int = 16,
    tol: float = 1e-10,
    span: float = 2.0,
) -> CriticalSetSample:
    """Closed-form finite sample of a critical set of a catalog system.

    Args:
        sys: Catalog system
        label: Component label (default: the first one known for the system)
        n_points: Sample size for continua
        tol: Residual tolerance checked at every point
        span: Half-length of the sampled segment for the ridge lines

    Returns:
        CriticalSetSample validated against |F| <= tol
    """
    labels = _critical_labels(sys)
    label = label or labels[0]
    if label not in labels:
        raise ValueError(f"Unknown critical set '{label}' for {sys.name}. Available: {labels}")

    if label == "origin":
        points = np.zeros((1, sys.dimension))
    elif label == "unit_circle":
        angles = 2.0 * np.pi * np.arange(n_points) / n_points
        points = np.column_stack([np.cos(angles), np.sin(angles)])
    elif label == "saddle":
        points = np.array([[0.0, 0.0]])
    elif label == "minimum_right":
        points = np.array([[1.0, 0.0]])
    elif label == "minimum_left":
        points = np.array([[-1.0, 0.0]])
    elif label.startswith("ridge"):
        x0 = {"ridge_line": 0.0, "ridge_minima_right": 1.0, "ridge_minima_left": -1.0}[label]
        ys = np.linspace(-span, span, n_points)
        points = np.column_stack([np.full(n_points, x0), ys])
    else:  # interval
        points = np.linspace(0.0, 1.0, n_points).reshape(-1, 1)

    return CriticalSetSample.from_points(sys, points, tolerance=tol, label=label)


# Critical point location ==============================================================


def _backtrack(sys: GradientLikeSystem, x: np.ndarray, step: np.ndarray, residual: float):
    """Halve the step until the residual |F| strictly decreases."""
    t = 1.0
    for _ in range(40):
        candidate = x + t * step
        new_residual = float(np.linalg.norm(sys.field(candidate)))
        if np.isfinite(new_residual) and new_residual < residual:
            return candidate
        t *= 0.5
    return None


def _refine(sys: GradientLikeSystem, seed, tol: float, max_iter: int) -> np.ndarray | None:
    """Newton refinement with damped residual-descent fallback."""
    x = np.asarray(seed, dtype=float).copy()
    for _ in range(max_iter):
        f = np.asarray(sys.field(x), dtype=float)
        residual = float(np.linalg.norm(f))
        if residual <= tol:
            return x
        jac = np.asarray(sys.jacobian(x), dtype=float)

        candidate = None
        try:
            if np.linalg.cond(jac) < _COND_LIMIT:
                candidate = _backtrack(sys, x, np.linalg.solve(jac, -f), residual)
        except np.linalg.LinAlgError:
            candidate = None

        if candidate is None:
            # Descent on |F|^2 / 2, whose gradient is DF^T F
            direction = -jac.T @ f
            if not np.any(direction):
                return None
            candidate = _backtrack(sys, x, direction, residual)
        if candidate is None:
            return None
        x = candidate

    return x if float(np.linalg.norm(sys.field(x))) <= tol else None


def locate_critical_points(
    sys: GradientLikeSystem,
    seeds,
    tol: float = 1e-10,
    max_iter: int = 100,
    label: str = "located",
) -> CriticalSetSample:
    """Refine seeds into equilibria of F by Newton's method.

    Converged points closer than 10 * tol are merged. Seeds that fail to reach the
    tolerance within max_iter iterations are dropped and listed in the result.

    Args:
        sys: System whose equilibria are sought
        seeds: Iterable of starting points
        tol: Residual tolerance |F(p)| <= tol
        max_iter: Iteration cap per seed
        label: Tag stored on the sample

    Returns:
        CriticalSetSample with deduplicated points and the dropped seeds
    """
    seeds = np.atleast_2d(np.asarray(seeds, dtype=float))
    radius = 10.0 * tol
    kept: list[np.ndarray] = []
    dropped: list[list[float]] = []

    for seed in seeds:
        point = _refine(sys, seed, tol, max_iter)
        if point is None:
            dropped.append(seed.tolist())
            continue
        if all(np.linalg.norm(point - other) > radius for other in kept):
            kept.append(point)

    logger.debug(f"Newton refinement on {sys.name}: {len(kept)} points from {len(seeds)} seeds")
    if dropped:
        logger.warning(f"Dropped {len(dropped)} non-converged seeds on {sys.name}")

    return CriticalSetSample(
        points=[p.tolist() for p in kept],
        tolerance=tol,
        connected_label=label,
        dropped_seeds=dropped,
    )
