"""Step schedules, noise models and the discrete stochastic recursions."""

import math
from enum import Enum

import numpy as np
import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from . import kernels
from .errors import IterateOverflowError
from .schemas import RobbinsMonroConditions
from .vectorfield import GradientLikeSystem, Potential, gradient_system

DEFAULT_TAIL_WINDOW = 10_000
_CHUNK = 65_536


def make_rng(seed: int, run_index: int = 0, stream: int = 0) -> np.random.Generator:
    """PCG64 generator for one run of a batch, keyed by (master seed, run index).

    Nonzero `stream` values give further independent generators for the same run
    (e.g. for drawing its starting point).
    """
    spawn_key = (run_index,) if stream == 0 else (run_index, stream)
    sequence = np.random.SeedSequence(seed, spawn_key=spawn_key)
    return np.random.Generator(np.random.PCG64(sequence))


def run_seed(seed: int, run_index: int = 0) -> int:
    """64-bit integer identifying the stream of one run, for manifests."""
    sequence = np.random.SeedSequence(seed, spawn_key=(run_index,))
    return int(sequence.generate_state(1, dtype=np.uint64)[0])


class StepSchedule(BaseModel):
    """Weights gamma_n = A / ((n + shift)^alpha log(n + shift)^beta_sched).

    With beta_sched > 0 the index is clamped to at least `offset`, so the first
    weights repeat gamma at the offset (gamma_1 = gamma_2 for the default).
    """

    model_config = ConfigDict(frozen=True)

    A: float = Field(..., gt=0, description="Scale constant A")
    beta_sched: float = Field(default=0.0, ge=0, le=1, description="Power of log n")
    alpha: float = Field(default=1.0, gt=0, description="Power of n")
    shift: float = Field(default=0.0, ge=0, description="Index shift, e.g. 2 for 1/(n+2)")
    offset: int = Field(default=2, ge=2, description="First index where log is applied")

    def gammas(self, start: int, stop: int) -> np.ndarray:
        """gamma_n for n in [start, stop)."""
        n = np.arange(start, stop, dtype=float) + self.shift
        if self.beta_sched > 0:
            n = np.maximum(n, self.offset)
            return self.A / (n**self.alpha * np.log(n) ** self.beta_sched)
        return self.A / n**self.alpha

    def gamma(self, n: int) -> float:
        """Single weight gamma_n (n >= 1)."""
        return float(self.gammas(n, n + 1)[0])

    def tau(self, n: int) -> float:
        """Partial sum tau_n = gamma_1 + ... + gamma_n, accumulated chunk by chunk."""
        total = 0.0
        start = 1
        while start <= n:
            stop = min(start + _CHUNK, n + 1)
            total = float(total + np.cumsum(self.gammas(start, stop))[-1])
            start = stop
        return total


class NoiseKind(str, Enum):
    """Martingale-difference noise families."""

    GAUSSIAN_ISO = "gaussian_iso"
    BOUNDED_UNIFORM = "bounded_uniform"
    EXCITED_GAUSSIAN = "excited_gaussian"
    ZERO = "zero"


class NoiseModel(BaseModel):
    """Generator of the perturbations U_{n+1}, conditionally centered.

    gaussian_iso: N(0, sigma^2 I). bounded_uniform: independent Uniform[-b, b]
    coordinates. excited_gaussian: N(0, (floor + sigma^2 |x|^2 / (1 + |x|^2)) I),
    state dependent with covariance never below floor. zero: U = 0.
    """

    model_config = ConfigDict(frozen=True)

    kind: NoiseKind = Field(..., description="Noise family")
    sigma: float = Field(default=0.0, ge=0, description="Gaussian scale")
    bound: float = Field(default=0.0, ge=0, description="Uniform half-width b")
    floor: float = Field(default=0.0, ge=0, description="Excitation floor (excited_gaussian)")
    moment_q: float = Field(default=4.0, ge=2, description="Declared conditional moment q")

    @model_validator(mode="after")
    def check_parameters(self) -> "NoiseModel":
        """Each family needs its own parameter to be positive."""
        if self.kind is NoiseKind.GAUSSIAN_ISO and self.sigma <= 0:
            raise ValueError("gaussian_iso requires sigma > 0")
        if self.kind is NoiseKind.BOUNDED_UNIFORM and self.bound <= 0:
            raise ValueError("bounded_uniform requires bound > 0")
        if self.kind is NoiseKind.EXCITED_GAUSSIAN and self.floor <= 0:
            raise ValueError("excited_gaussian requires floor > 0")
        return self

    @classmethod
    def zero(cls) -> "NoiseModel":
        return cls(kind=NoiseKind.ZERO)

    @property
    def covariance_floor(self) -> float:
        """Guaranteed lower bound on lambda_min of the conditional covariance."""
        return {
            NoiseKind.GAUSSIAN_ISO: self.sigma**2,
            NoiseKind.BOUNDED_UNIFORM: self.bound**2 / 3.0,
            NoiseKind.EXCITED_GAUSSIAN: self.floor,
            NoiseKind.ZERO: 0.0,
        }[self.kind]

    @property
    def state_dependent(self) -> bool:
        return self.kind is NoiseKind.EXCITED_GAUSSIAN

    def draw_base(self, rng: np.random.Generator, count: int, dim: int) -> np.ndarray | None:
        """Unscaled variates for `count` steps; None for zero noise."""
        if self.kind is NoiseKind.ZERO:
            return None
        if self.kind is NoiseKind.BOUNDED_UNIFORM:
            return rng.uniform(-1.0, 1.0, size=(count, dim))
        return rng.standard_normal((count, dim))

    def scale(self, base: np.ndarray) -> np.ndarray:
        """Scale base variates of a state-independent family."""
        if self.kind is NoiseKind.BOUNDED_UNIFORM:
            return self.bound * base
        return self.sigma * base

    def apply(self, x: np.ndarray, base: np.ndarray) -> np.ndarray:
        """U at state x from one row of base variates."""
        if self.kind is NoiseKind.ZERO:
            return np.zeros_like(x)
        if self.state_dependent:
            s = float(x @ x)
            return math.sqrt(self.floor + self.sigma**2 * s / (1.0 + s)) * base
        return self.scale(base)

    def sample(self, rng: np.random.Generator, count: int, dim: int, x=None) -> np.ndarray:
        """`count` draws of U at a fixed state x (default the origin)."""
        base = self.draw_base(rng, count, dim)
        if base is None:
            return np.zeros((count, dim))
        if not self.state_dependent:
            return self.scale(base)
        x = np.zeros(dim) if x is None else np.asarray(x, dtype=float)
        return np.vstack([self.apply(x, row) for row in base])


def robbins_monro_conditions(sched: StepSchedule, noise: NoiseModel) -> RobbinsMonroConditions:
    """Check sum gamma_n = inf and sum gamma_n^(1 + q/2) < inf for the power/log family."""
    a, b = sched.alpha, sched.beta_sched
    diverges = a < 1 or (a == 1 and b <= 1)
    p = 1.0 + noise.moment_q / 2.0
    converges = a * p > 1 or (a * p == 1 and b * p > 1)
    return RobbinsMonroConditions(
        sum_diverges=diverges,
        moment_q=noise.moment_q,
        power_sum_converges=converges,
        satisfied=diverges and converges,
    )


class Trajectory(BaseModel):
    """Thinned record of a discrete process: stored indices n, tau_n and x_n."""

    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    indices: np.ndarray = Field(..., description="Stored iteration indices n, ascending")
    taus: np.ndarray = Field(..., description="tau_n at the stored indices")
    states: np.ndarray = Field(..., description="x_n at the stored indices, shape (k, m)")
    schedule: StepSchedule
    seed: int
    run_index: int = 0
    system_id: str
    steps: int = Field(..., ge=0, description="Iterations actually performed")
    stride: int = Field(..., ge=1)
    max_norm: float = Field(..., ge=0, description="max |x_n| over all iterates")
    stopped_early: bool = Field(default=False, description="Hard stop on the norm triggered")

    @property
    def dimension(self) -> int:
        return self.states.shape[1]

    @property
    def final(self) -> np.ndarray:
        return self.states[-1]

    def __len__(self) -> int:
        return self.indices.size

    def to_frame(self) -> pd.DataFrame:
        """Columnar table n, tau, x_1..x_m."""
        frame = pd.DataFrame({"n": self.indices, "tau": self.taus})
        for j in range(self.dimension):
            frame[f"x_{j + 1}"] = self.states[:, j]
        return frame

    def sidecar(self) -> dict:
        """Metadata written next to the CSV."""
        return {
            "system_id": self.system_id,
            "seed": self.seed,
            "run_index": self.run_index,
            "steps": self.steps,
            "stride": self.stride,
            "max_norm": self.max_norm,
            "stopped_early": self.stopped_early,
            "schedule": self.schedule.model_dump(),
        }


def storage_indices(N: int, stride: int, tail_window: int) -> np.ndarray:
    """0, every stride-th index, and the last tail_window indices up to N."""
    thinned = np.arange(0, N + 1, stride, dtype=np.int64)
    tail = np.arange(max(0, N - tail_window + 1), N + 1, dtype=np.int64)
    return np.union1d(thinned, tail)


def _default_stride(N: int) -> int:
    return max(1, N // 100_000)


def _run_recursion(
    drift,
    kernel: str | None,
    params: tuple[float, ...],
    dim: int,
    system_id: str,
    x0,
    sched: StepSchedule,
    noise: NoiseModel,
    N: int,
    seed: int,
    run_index: int,
    stride: int | None,
    tail_window: int,
    hard_stop: float | None,
    noise_sign: float,
) -> Trajectory:
    """x_{n+1} = x_n + gamma_{n+1} (drift(x_n) + noise_sign * U_{n+1}).

    A catalog `kernel` replaces the Python drift by its compiled counterpart;
    both paths draw the same noise and store the same indices.
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    x = np.array(x0, dtype=float).reshape(-1)
    if x.size != dim:
        raise ValueError(f"x0 has dimension {x.size}, system {system_id} needs {dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("x0 must be finite")

    stride = stride or _default_stride(N)
    keep = storage_indices(N, stride, tail_window)
    states = np.empty((keep.size, dim))
    taus = np.empty(keep.size)
    states[0], taus[0] = x, 0.0
    ptr = 1
    next_store = int(keep[1]) if keep.size > 1 else -1

    rng = make_rng(seed, run_index)
    max_sq = float(x @ x)
    stop_sq = hard_stop**2 if hard_stop else math.inf
    tau = 0.0
    n = 0
    stopped = False

    code = kernels.FIELD_CODES[kernel] if kernel is not None else None
    kernel_params = np.asarray(params or (0.0,), dtype=float)

    logger.debug(
        f"Run {run_index} on {system_id}: N={N}, stride={stride}, "
        f"{'compiled' if code is not None else 'python'} loop"
    )
    while n < N and not stopped:
        count = min(_CHUNK, N - n)
        gam = sched.gammas(n + 1, n + 1 + count)
        chunk_taus = tau + np.cumsum(gam)
        base = noise.draw_base(rng, count, dim)

        if code is not None:
            lo = n
            hi = int(np.searchsorted(keep, lo + count, side="right"))
            store_steps = keep[ptr:hi] - lo
            if base is None:
                mode, rows = kernels.NOISE_NONE, np.zeros((1, dim))
            elif noise.state_dependent:
                mode, rows = kernels.NOISE_EXCITED, base
            else:
                mode, rows = kernels.NOISE_ADDITIVE, noise.scale(base)
            buffer = np.empty((store_steps.size + 1, dim))
            positions = np.empty(store_steps.size + 1, dtype=np.int64)
            done, stored, max_sq, status = kernels.advance(
                code, kernel_params, x, gam, np.ascontiguousarray(rows), mode,
                noise.sigma, noise.floor, noise_sign, store_steps, buffer, positions,
                stop_sq, max_sq,
            )
            n = lo + done
            if status == kernels.STATUS_OVERFLOW:
                raise IterateOverflowError(n, f"Non-finite iterate at index {n} on {system_id}")
            states[ptr : ptr + stored] = buffer[:stored]
            taus[ptr : ptr + stored] = chunk_taus[positions[:stored] - 1]
            ptr += stored
            if status == kernels.STATUS_STOPPED:
                logger.warning(f"Hard stop at n={n}: |x| exceeded {hard_stop:g}")
                stopped = True
            tau = float(chunk_taus[done - 1])
            continue

        scaled = None
        if base is not None and not noise.state_dependent:
            scaled = noise_sign * noise.scale(base)

        for k in range(count):
            step = drift(x)
            if scaled is not None:
                step = step + scaled[k]
            elif base is not None:
                step = step + noise_sign * noise.apply(x, base[k])
            x = x + gam[k] * step
            n += 1

            sq = float(x @ x)
            if not math.isfinite(sq):
                raise IterateOverflowError(n, f"Non-finite iterate at index {n} on {system_id}")
            if sq > max_sq:
                max_sq = sq
            if n == next_store or sq > stop_sq:
                states[ptr], taus[ptr] = x, chunk_taus[k]
                ptr += 1
                next_store = int(keep[ptr]) if ptr < keep.size else -1
                if sq > stop_sq:
                    logger.warning(f"Hard stop at n={n}: |x| exceeded {hard_stop:g}")
                    stopped = True
                    break
        tau = float(chunk_taus[k])

    indices = keep[:ptr].copy()
    if stopped:
        indices[-1] = n

    return Trajectory(
        indices=indices,
        taus=taus[:ptr].copy(),
        states=states[:ptr].copy(),
        schedule=sched,
        seed=seed,
        run_index=run_index,
        system_id=system_id,
        steps=n,
        stride=stride,
        max_norm=math.sqrt(max_sq),
        stopped_early=stopped,
    )


def run_robbins_monro(
    sys: GradientLikeSystem,
    x0,
    sched: StepSchedule,
    noise: NoiseModel,
    N: int,
    seed: int,
    run_index: int = 0,
    stride: int | None = None,
    tail_window: int = DEFAULT_TAIL_WINDOW,
    hard_stop: float | None = None,
    compiled: bool = True,
) -> Trajectory:
    """Robbins-Monro recursion x_{n+1} = x_n + gamma_{n+1}(F(x_n) + U_{n+1}).

    Args:
        sys: System providing F
        x0: Initial point
        sched: Step schedule
        noise: Noise model
        N: Number of iterations
        seed: Master seed
        run_index: Index of this run within a batch (selects the random stream)
        stride: Store every stride-th iterate (default N // 10^5, at least 1)
        tail_window: Number of final iterates always stored
        hard_stop: Stop once |x_n| exceeds this value
        compiled: Use the numba kernel when the field is a catalog field

    Raises:
        IterateOverflowError: An iterate became non-finite; carries its index
    """
    kernel = sys.kernel if compiled else None
    return _run_recursion(
        sys.field, kernel, sys.params, sys.dimension, sys.name, x0, sched, noise, N, seed,
        run_index, stride, tail_window, hard_stop, noise_sign=1.0,
    )


def run_sgd(
    V: Potential,
    x0,
    sched: StepSchedule,
    noise: NoiseModel,
    N: int,
    seed: int,
    run_index: int = 0,
    stride: int | None = None,
    tail_window: int = DEFAULT_TAIL_WINDOW,
    hard_stop: float | None = None,
    compiled: bool = True,
) -> Trajectory:
    """Stochastic gradient recursion x_{n+1} = x_n - gamma_{n+1}(grad V(x_n) + U_{n+1})."""
    sys = gradient_system(V)
    kernel = sys.kernel if compiled else None
    return _run_recursion(
        sys.field, kernel, sys.params, sys.dimension, V.name, x0, sched, noise, N, seed,
        run_index, stride, tail_window, hard_stop, noise_sign=-1.0,
    )


POLYA_SCHEDULE = StepSchedule(A=1.0, shift=2.0)


def polya_urn(
    N: int,
    seed: int,
    run_index: int = 0,
    stride: int = 1,
    tail_window: int = DEFAULT_TAIL_WINDOW,
) -> Trajectory:
    """Two-color Polya urn started with one white and one black ball.

    x_n = W_n / (n + 2) is the white proportion after n draws, which is the
    recursion with gamma_n = 1/(n + 2), F = 0 and U_{n+1} = 1{white} - x_n.
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    keep = storage_indices(N, stride, tail_window)
    gam = POLYA_SCHEDULE.gammas(1, N + 1)
    all_taus = np.concatenate([[0.0], np.cumsum(gam)])
    uniforms = make_rng(seed, run_index).random(N)
    states = kernels.urn_states(uniforms, keep)

    return Trajectory(
        indices=keep,
        taus=all_taus[keep],
        states=states.reshape(-1, 1),
        schedule=POLYA_SCHEDULE,
        seed=seed,
        run_index=run_index,
        system_id="polya_zero",
        steps=N,
        stride=stride,
        max_norm=float(np.max(np.abs(states))),
    )


def noise_window_suprema(
    sched: StepSchedule,
    noise: NoiseModel,
    N: int,
    T: float,
    seed: int,
    n_grid=None,
    dim: int = 1,
) -> tuple[np.ndarray, np.ndarray]:
    """sup{|sum_{i=n+1}^{k} gamma_i U_i| : tau_k <= tau_n + T} for each n on a grid.

    Grid points whose window runs past N are dropped. A window holding no step
    has supremum 0 (the empty sum at k = n). State-dependent noise is drawn at
    the origin.

    Returns:
        (grid, suprema)
    """
    if T <= 0:
        raise ValueError(f"Window T must be positive, got {T}")
    gam = sched.gammas(1, N + 1)
    taus = np.concatenate([[0.0], np.cumsum(gam)])
    draws = noise.sample(make_rng(seed), N, dim)
    partial = np.vstack([np.zeros(dim), np.cumsum(gam[:, None] * draws, axis=0)])

    if n_grid is None:
        n_grid = np.unique(np.geomspace(10, max(N // 3, 11), 20).astype(np.int64))
    grid = np.asarray(n_grid, dtype=np.int64)
    ends = np.searchsorted(taus, taus[grid] + T, side="right") - 1
    complete = taus[grid] + T <= taus[-1]
    if not np.all(complete):
        logger.warning(f"Dropped {int(np.sum(~complete))} grid points whose window exceeds N")
    grid, ends = grid[complete], ends[complete]

    suprema = np.array(
        [
            float(np.max(np.linalg.norm(partial[n + 1 : k + 1] - partial[n], axis=1)))
            if k > n
            else 0.0
            for n, k in zip(grid, ends, strict=True)
        ]
    )
    return grid, suprema


def noise_partial_sum_check(
    sched: StepSchedule,
    noise: NoiseModel,
    N: int,
    T: float,
    seed: int,
    n_grid=None,
    dim: int = 1,
) -> float:
    """Max of the window suprema over the later half of the grid."""
    grid, suprema = noise_window_suprema(sched, noise, N, T, seed, n_grid, dim)
    if suprema.size == 0:
        return 0.0
    return float(np.max(suprema[suprema.size // 2 :]))


def polya_endpoints(
    runs: int,
    N: int,
    seed: int,
    threads: int = 1,
    show_progress: bool = False,
) -> np.ndarray:
    """Final urn proportions x_N of `runs` independent urns."""
    from .batch import run_batch

    def endpoint(run_index: int) -> float:
        traj = polya_urn(N, seed, run_index, stride=N, tail_window=1)
        return float(traj.final[0])

    results = run_batch(endpoint, runs, threads, desc="Polya urns", show_progress=show_progress)
    return np.array(results, dtype=float)
