"""Experiment runners: one function per experiment kind, plus the common driver."""

import math
import time
from collections.abc import Callable
from datetime import UTC, datetime
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from loguru import logger

from .analysis import (
    check_angle,
    distribution_test,
    estimate_lojasiewicz,
    fit_discrete_log_rate,
    fit_flow_rate,
    martingale_increment_test,
    predicted_rate_constant,
    repulsion_experiment,
    unstable_noise_excitation,
)
from .apt import error_rate, interpolate, limit_set_estimate
from .batch import run_batch
from .claims import claim_text
from .config import ExperimentConfig, ExperimentKind, config_hash
from .errors import NumericalFailure
from .flow import expansion_rate, flow_samples, lyapunov_decrease_check, resolvent_test
from .persistence import OutputWriter, RunManifest, write_manifest
from .schemas import ResolventStatus, SpectrumReport, SpectrumSource
from .shadowing import find_shadow, pseudo_orbit_from_path, shadow_decay_check
from .spectrum import (
    critical_step_scale,
    linear_instability_check,
    set_spectrum,
    spectral_condition,
)
from .stochastic import (
    NoiseKind,
    Trajectory,
    polya_endpoints,
    robbins_monro_conditions,
    run_robbins_monro,
    run_seed,
    run_sgd,
)
from .vectorfield import CriticalSetSample, GradientLikeSystem, catalog_critical_set

# Distance from the spectrum inside which resolvent verdicts are not scored
RESOLVENT_BAND = 0.05

Runner = Callable[[ExperimentConfig, OutputWriter, bool], dict[str, Any]]


def clean(value: Any) -> Any:
    """JSON-safe copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(value, dict):
        return {str(k): clean(v) for k, v in value.items()}
    if isinstance(value, list | tuple | np.ndarray):
        return [clean(v) for v in value]
    if isinstance(value, np.bool_ | bool):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, float | np.floating):
        return float(value) if math.isfinite(value) else None
    return value


def _critical_set(cfg: ExperimentConfig, sys: GradientLikeSystem) -> CriticalSetSample | None:
    a = cfg.analysis
    if a.critical_set is None:
        return None
    return catalog_critical_set(
        sys, a.critical_set, n_points=a.critical_points, span=a.critical_span
    )


def _spectrum(
    cfg: ExperimentConfig, sys: GradientLikeSystem, C: CriticalSetSample | None
) -> SpectrumReport:
    a = cfg.analysis
    if a.spectrum_intervals is not None:
        return SpectrumReport.from_intervals(a.spectrum_intervals)
    if C is None:
        raise ValueError("analysis.critical_set: needed to compute a set spectrum")
    if a.spectrum_source == SpectrumSource.HESSIAN:
        return set_spectrum(sys.lyapunov, C, SpectrumSource.HESSIAN)
    return set_spectrum(sys, C, SpectrumSource.JACOBIAN)


def _trajectory(cfg: ExperimentConfig, sys: GradientLikeSystem, run_index: int) -> Trajectory:
    a = cfg.analysis
    sched, noise = cfg.schedule.build(), cfg.noise.build()
    if cfg.kind == ExperimentKind.SGD:
        return run_sgd(sys.lyapunov, a.x0, sched, noise, cfg.N, cfg.seed, run_index, a.stride)
    return run_robbins_monro(sys, a.x0, sched, noise, cfg.N, cfg.seed, run_index, a.stride)


def _require_some(results: list, what: str) -> list[int]:
    """Indices of successful runs; raise when none succeeded."""
    ok = [i for i, r in enumerate(results) if r is not None]
    if not ok:
        raise NumericalFailure(f"All {len(results)} {what} runs failed")
    return ok


def run_trajectories(cfg: ExperimentConfig, writer: OutputWriter, show_progress: bool) -> dict:
    """SGD or Robbins-Monro runs with limit-set reports and, given a set, its spectrum."""
    sys = cfg.system.build()
    C = _critical_set(cfg, sys)
    trajs = run_batch(
        lambda i: _trajectory(cfg, sys, i), cfg.runs, cfg.threads, cfg.kind.value, show_progress
    )
    ok = _require_some(trajs, cfg.kind.value)

    rows, reports = [], []
    for i in ok:
        traj = trajs[i]
        writer.trajectory(f"trajectory_{i:03d}", traj)
        report = limit_set_estimate(traj, cfg.analysis.tail_fraction, C)
        reports.append({"run": i, **report.model_dump(mode="json")})
        row = {"run": i, "diameter": report.diameter, "distance_to_set": report.distance_to_set}
        row.update({f"centroid_{j + 1}": c for j, c in enumerate(report.centroid)})
        rows.append(row)
    columns = {
        "run": "Run index",
        "diameter": "Diameter of the tail cloud",
        "distance_to_set": "Max distance from tail cloud to the critical set sample",
    }
    columns.update(
        {f"centroid_{j + 1}": f"Tail centroid coordinate {j + 1}" for j in range(sys.dimension)}
    )
    writer.csv("limit_sets.csv", pd.DataFrame(rows), columns)
    writer.json("limit_sets.json", clean(reports))

    distances = [r["distance_to_set"] for r in rows if r["distance_to_set"] is not None]
    conditions = robbins_monro_conditions(cfg.schedule.build(), cfg.noise.build())
    summary: dict[str, Any] = {
        "runs": cfg.runs,
        "failed_runs": [i for i in range(cfg.runs) if trajs[i] is None],
        "max_diameter": max(r["diameter"] for r in rows),
        "max_distance": max(distances) if distances else None,
        "robbins_monro_conditions": conditions.satisfied,
    }

    hessian = cfg.analysis.spectrum_source == SpectrumSource.HESSIAN
    has_set = C is not None or cfg.analysis.spectrum_intervals is not None
    if has_set and not (hessian and sys.lyapunov is None):
        spectrum = _spectrum(cfg, sys, C)
        verdict = spectral_condition(spectrum, cfg.schedule.A)
        writer.json("spectrum.json", spectrum)
        writer.json("spectral_condition.json", verdict)
        summary.update(
            union=spectrum.union,
            spectral_condition=verdict.holds,
            witness_mu=verdict.witness_mu,
        )
    return summary


def run_polya(cfg: ExperimentConfig, writer: OutputWriter, show_progress: bool) -> dict:
    """Endpoint distribution of independent urns and the martingale increment check."""
    endpoints = polya_endpoints(cfg.runs, cfg.N, cfg.seed, cfg.threads, show_progress)
    writer.csv(
        "endpoints.csv",
        pd.DataFrame({"run": np.arange(cfg.runs), "x_N": endpoints}),
        {"run": "Run index", "x_N": "White proportion after N draws"},
    )
    ks = distribution_test(endpoints[np.isfinite(endpoints)])
    martingale = martingale_increment_test(
        cfg.runs, min(100, cfg.N), cfg.seed, cfg.threads, show_progress
    )
    writer.json(
        "distribution.json",
        {"ks": ks.model_dump(mode="json"), "martingale": martingale.model_dump(mode="json")},
    )
    logger.info(f"Polya KS statistic {ks.statistic:.4f} over {ks.samples} urns")
    return {
        "runs": cfg.runs,
        "ks_statistic": ks.statistic,
        "ks_pvalue": ks.pvalue,
        "martingale_passes": martingale.passes,
        "mean_increment": martingale.mean_increment,
    }


def run_error_rate(cfg: ExperimentConfig, writer: OutputWriter, show_progress: bool) -> dict:
    """Per-run error-rate fits on the configured late-time grid; the median is reported."""
    sys = cfg.system.build()
    a = cfg.analysis

    def one_run(run_index: int):
        X = interpolate(_trajectory(cfg, sys, run_index))
        return error_rate(X, sys, a.t_grid, a.window, a.rate_floor, a.h_points)

    estimates = run_batch(one_run, cfg.runs, cfg.threads, "Error-rate runs", show_progress)
    ok = _require_some(estimates, "error-rate")

    rows = [
        {"run": i, "t": t, "log_defect": d}
        for i in ok
        for t, d in zip(estimates[i].t_grid, estimates[i].log_defects, strict=True)
    ]
    writer.csv(
        "error_rate_fits.csv",
        pd.DataFrame(rows),
        {"run": "Run index", "t": "Window start t", "log_defect": "log sup-defect on [t, t+T]"},
    )
    writer.json(
        "error_rate.json", clean([{"run": i, **estimates[i].model_dump(mode="json")} for i in ok])
    )

    e_hat = float(np.median([estimates[i].e_hat for i in ok]))
    theoretical = estimates[ok[0]].theoretical
    logger.info(f"Median e_hat {e_hat:.4f} over {len(ok)} runs (theoretical {theoretical})")
    return {
        "runs": cfg.runs,
        "failed_runs": [i for i in range(cfg.runs) if estimates[i] is None],
        "e_hat": e_hat,
        "e_hat_per_run": [estimates[i].e_hat for i in ok],
        "theoretical": theoretical,
        "deviation": None if theoretical is None else e_hat - theoretical,
        "r_squared": float(np.median([estimates[i].r_squared for i in ok])),
        "minus_infinity": all(estimates[i].minus_infinity for i in ok),
    }


def run_lojasiewicz(cfg: ExperimentConfig, writer: OutputWriter, _show_progress: bool) -> dict:
    """Lojasiewicz exponent and angle constants at the configured point."""
    sys = cfg.system.build()
    a = cfg.analysis
    loj = estimate_lojasiewicz(sys.lyapunov, a.point, a.radius, a.samples, cfg.seed)
    angle = check_angle(sys, a.point, a.radius, a.samples, cfg.seed)
    writer.json(
        "lojasiewicz.json",
        {"lojasiewicz": loj.model_dump(mode="json"), "angle": angle.model_dump(mode="json")},
    )
    return {
        "theta_hat": loj.theta_hat,
        "c0_hat": loj.c0_hat,
        "r_squared": loj.r_squared,
        "reliable": loj.reliable,
        "c1_hat": angle.c1_hat,
        "beta_angle_hat": angle.beta_angle_hat,
        "angle_holds": angle.holds,
    }


def run_spectrum(cfg: ExperimentConfig, writer: OutputWriter, _show_progress: bool) -> dict:
    """Set spectrum, spectral condition for the configured A, and linear instability."""
    sys = cfg.system.build()
    C = _critical_set(cfg, sys)
    report = _spectrum(cfg, sys, C)
    verdict = spectral_condition(report, cfg.schedule.A)
    writer.json("spectrum.json", report)
    writer.json("spectral_condition.json", verdict)
    summary: dict[str, Any] = {
        "union": report.union,
        "spectrum_intervals": report.spectrum_intervals,
        "holds": verdict.holds,
        "witness_mu": verdict.witness_mu,
        "margin": verdict.margin,
        "critical_step_scale": critical_step_scale(report),
    }
    if C is not None:
        target = sys.lyapunov if report.source == SpectrumSource.HESSIAN else sys
        per_point, unstable = linear_instability_check(target, C, report.source)
        summary.update(linearly_unstable=unstable, unstable_points=sum(per_point))
        if unstable and cfg.noise.kind != NoiseKind.ZERO:
            excitation = unstable_noise_excitation(
                sys, C.points[0], cfg.noise.build(), seed=cfg.seed
            )
            writer.json("excitation.json", excitation)
            summary["mean_unstable_noise"] = excitation.mean_unstable_norm
    return summary


def run_shadow(cfg: ExperimentConfig, writer: OutputWriter, _show_progress: bool) -> dict:
    """Shadow a pseudo-orbit read off one run and check the weighted decay."""
    sys = cfg.system.build()
    a = cfg.analysis
    mu = a.mu
    if mu is None:
        verdict = spectral_condition(_spectrum(cfg, sys, _critical_set(cfg, sys)), cfg.schedule.A)
        if not verdict.holds:
            raise ValueError("analysis.mu: the spectral condition fails, so give mu explicitly")
        mu = verdict.witness_mu
        logger.info(f"Using spectral witness mu = {mu:.4f}")

    traj = _trajectory(cfg, sys, 0)
    writer.trajectory("trajectory_000", traj)
    X = interpolate(traj)
    po = pseudo_orbit_from_path(X, a.shadow_origin, a.shadow_length, mu)
    shadow = find_shadow(sys, po, restarts=a.restarts, seed=cfg.seed)
    decay = shadow_decay_check(sys, X, shadow.x_star, a.shadow_origin, mu, a.shadow_length)

    writer.csv(
        "shadow_distances.csv",
        pd.DataFrame({"k": np.arange(len(decay.distances)), "distance": decay.distances}),
        {"k": "Step k", "distance": "|X(T + k) - Phi_k(x_star)|"},
    )
    writer.json(
        "shadow.json",
        clean({"shadow": shadow.model_dump(mode="json"), "decay": decay.model_dump(mode="json")}),
    )
    return {
        "mu": mu,
        "g_norm": shadow.g_norm,
        "h_norm": shadow.h_norm,
        "ratio": shadow.ratio,
        "converged": shadow.converged,
        "slope": decay.slope,
        "shadows": decay.shadows,
    }


def run_repulsion(cfg: ExperimentConfig, writer: OutputWriter, show_progress: bool) -> dict:
    """Escape statistics from the neighborhood of a critical set."""
    sys = cfg.system.build()
    a = cfg.analysis
    C = _critical_set(cfg, sys)
    noise = cfg.noise.build()
    report = repulsion_experiment(
        sys, C, a.radius, cfg.schedule.build(), noise, cfg.runs, cfg.N, cfg.seed,
        start_mode=a.start_mode, threads=cfg.threads, show_progress=show_progress,
    )
    rows = []
    completed = [i for i in range(report.runs) if i not in report.failed_runs]
    for i, final in zip(completed, report.final_points, strict=True):
        row = {"run": i, "escape_time": report.escape_times[i]}
        row.update({f"final_{j + 1}": v for j, v in enumerate(final)})
        rows.append(row)
    columns = {"run": "Run index", "escape_time": "First exit index from U (empty: none)"}
    columns.update(
        {f"final_{j + 1}": f"Final iterate coordinate {j + 1}" for j in range(sys.dimension)}
    )
    writer.csv("escapes.csv", pd.DataFrame(rows, columns=list(columns)), columns)
    writer.json("repulsion.json", report)

    summary: dict[str, Any] = {
        "runs": report.runs,
        "escapes": sum(t is not None for t in report.escape_times),
        "escape_fraction": report.escape_fraction,
        "ends_inside": report.ends_inside,
        "returns_after_escape": report.returns_after_escape,
        "failed_runs": report.failed_runs,
    }
    if noise.kind != NoiseKind.ZERO:
        excitation = unstable_noise_excitation(sys, C.points[0], noise, seed=cfg.seed)
        summary["mean_unstable_noise"] = excitation.mean_unstable_norm
    return summary


def run_rate_fit(cfg: ExperimentConfig, writer: OutputWriter, _show_progress: bool) -> dict:
    """Flow-rate model selection, the predicted constant and optionally the discrete rate."""
    sys = cfg.system.build()
    a = cfg.analysis
    fit = fit_flow_rate(sys, a.x0, a.t_grid, a.limit_point)
    orbit = flow_samples(sys, a.x0, a.t_grid)
    writer.csv(
        "flow_distances.csv",
        pd.DataFrame(
            {"t": a.t_grid, "distance": np.linalg.norm(orbit - np.asarray(fit.limit_point), axis=1)}
        ),
        {"t": "Flow time", "distance": "|Phi_t(x0) - p|"},
    )
    summary: dict[str, Any] = {
        "rate_kind": fit.kind.value,
        "exponent": fit.exponent,
        "exponential_r_squared": fit.exponential_r_squared,
        "power_r_squared": fit.power_r_squared,
        "limit_point": fit.limit_point,
        "predicted_c": None,
    }
    results: dict[str, Any] = {"flow_rate": fit.model_dump(mode="json")}

    if sys.lyapunov is not None:
        try:
            loj = estimate_lojasiewicz(
                sys.lyapunov, fit.limit_point, a.radius, a.samples, cfg.seed
            )
            angle = check_angle(sys, fit.limit_point, a.radius, a.samples, cfg.seed)
            summary["predicted_c"] = predicted_rate_constant(loj, angle.beta_angle_hat, None, None)
            results["lojasiewicz"] = loj.model_dump(mode="json")
        except (NumericalFailure, ValueError) as e:
            logger.warning(f"No predicted rate constant: {e}")

    if a.discrete_rate:
        traj = _trajectory(cfg, sys, 0)
        discrete = fit_discrete_log_rate(traj, x_inf=a.limit_point)
        results["discrete_rate"] = discrete.model_dump(mode="json")
        summary.update(c_hat=discrete.c_hat, super_logarithmic=discrete.super_logarithmic)

    writer.json("rate_fit.json", clean(results))
    return summary


def run_flow(cfg: ExperimentConfig, writer: OutputWriter, _show_progress: bool) -> dict:
    """Flow samples, Lyapunov decrease, resolvent verdicts and the expansion rate."""
    sys = cfg.system.build()
    a = cfg.analysis
    orbit = flow_samples(sys, a.x0, a.t_grid)
    frame = pd.DataFrame({"t": a.t_grid})
    for j in range(sys.dimension):
        frame[f"x_{j + 1}"] = orbit[:, j]
    columns = {"t": "Flow time"}
    columns.update({f"x_{j + 1}": f"Coordinate {j + 1} of Phi_t(x0)" for j in range(sys.dimension)})
    writer.csv("flow.csv", frame, columns)

    summary: dict[str, Any] = {}
    if sys.lyapunov is not None:
        summary["lyapunov_decreasing"] = lyapunov_decrease_check(sys, a.x0, a.t_grid)

    C = _critical_set(cfg, sys)
    if C is None:
        return summary
    spectrum = set_spectrum(sys, C, SpectrumSource.JACOBIAN).union
    if a.lambda_grid:
        rows, misclassified = [], 0
        for lam in a.lambda_grid:
            verdict = resolvent_test(sys, C, lam, seed=cfg.seed)
            distance = min((abs(lam - s) for s in spectrum), default=math.inf)
            expected = distance > 0
            scored = distance > RESOLVENT_BAND and verdict.status != ResolventStatus.INDETERMINATE
            if scored and verdict.in_resolvent != expected:
                misclassified += 1
            rows.append(
                {
                    "lam": lam,
                    "status": verdict.status.value,
                    "witness_growth": verdict.witness_growth,
                    "weakest_growth": verdict.weakest_growth,
                }
            )
        writer.csv(
            "resolvent.csv",
            pd.DataFrame(rows),
            {
                "lam": "Shift lambda",
                "status": "in_resolvent, in_spectrum or indeterminate",
                "witness_growth": "Largest log-growth over directions",
                "weakest_growth": "Smallest log-growth over directions",
            },
        )
        summary["misclassified"] = misclassified
    summary["spectrum"] = spectrum
    summary["expansion_rate"] = expansion_rate(sys, C, a.expansion_time)
    return summary


RUNNERS: dict[ExperimentKind, Runner] = {
    ExperimentKind.SGD: run_trajectories,
    ExperimentKind.ROBBINS_MONRO: run_trajectories,
    ExperimentKind.POLYA: run_polya,
    ExperimentKind.ERROR_RATE: run_error_rate,
    ExperimentKind.LOJASIEWICZ: run_lojasiewicz,
    ExperimentKind.SPECTRUM: run_spectrum,
    ExperimentKind.SHADOW: run_shadow,
    ExperimentKind.REPULSION: run_repulsion,
    ExperimentKind.RATE_FIT: run_rate_fit,
    ExperimentKind.FLOW: run_flow,
}


def run_experiment(cfg: ExperimentConfig, show_progress: bool = True) -> RunManifest:
    """Execute one experiment and write its outputs and manifest.

    Files land in <out_dir>/<name>/. Every numerical file depends only on the
    config (threads and out_dir excluded); the manifest adds timestamps.

    Args:
        cfg: Validated experiment config
        show_progress: Show progress bars for Monte Carlo batches

    Returns:
        RunManifest of the written outputs

    Raises:
        ValueError: A precondition failed at run time
        NumericalFailure: Integration, iteration or estimation failed
    """
    with logger.contextualize(experiment=cfg.name):
        return _execute(cfg, show_progress)


def _execute(cfg: ExperimentConfig, show_progress: bool) -> RunManifest:
    from . import __version__

    directory = Path(cfg.out_dir) / cfg.name
    writer = OutputWriter(directory)
    digest = config_hash(cfg)
    writer.json("config.json", cfg.model_dump(mode="json", exclude={"threads", "out_dir"}))

    logger.info(f"Running {cfg.kind.value} experiment '{cfg.name}' ({cfg.runs} runs, N={cfg.N})")
    started_at = datetime.now(UTC).isoformat(timespec="seconds")
    start = time.perf_counter()
    summary = clean(RUNNERS[cfg.kind](cfg, writer, show_progress))
    writer.json("summary.json", {"config_hash": digest, "kind": cfg.kind.value, **summary})
    outputs = writer.finish()
    wall_time = time.perf_counter() - start

    manifest = RunManifest(
        name=cfg.name,
        kind=cfg.kind.value,
        config_hash=digest,
        tool_version=__version__,
        seed=cfg.seed,
        run_seeds=[run_seed(cfg.seed, i) for i in range(cfg.runs)],
        outputs=outputs,
        directory=str(directory),
        claim=claim_text(cfg.kind),
        summary=summary,
        started_at=started_at,
        wall_time=wall_time,
    )
    write_manifest(directory, manifest)
    logger.info(f"✓ Finished '{cfg.name}' in {wall_time:.1f}s, outputs in {directory}")
    return manifest
