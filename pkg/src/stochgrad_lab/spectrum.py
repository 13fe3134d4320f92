"""Pointwise and set spectra of critical sets, resolvent gaps and the spectral condition."""

import numpy as np
from loguru import logger
from scipy import linalg

from .schemas import PointSpectrum, SpectralConditionVerdict, SpectrumReport, SpectrumSource
from .vectorfield import CriticalSetSample, GradientLikeSystem, Potential

CRITICAL_TOL = 1e-6
DEDUP_TOL = 1e-6
INSTABILITY_TOL = 1e-8


def critical_spectrum(V: Potential, p, tol: float = CRITICAL_TOL) -> list[float]:
    """Eigenvalues of -D^2V(p), ascending.

    Raises:
        ValueError: |grad V(p)| > tol
    """
    p = np.asarray(p, dtype=float)
    grad_norm = float(np.linalg.norm(V.gradient(p)))
    if grad_norm > tol:
        raise ValueError(
            f"Point {p.tolist()} is not critical for {V.name}: |grad V| = {grad_norm:.3e}"
        )
    h = np.asarray(V.hessian(p), dtype=float)
    return linalg.eigvalsh(-0.5 * (h + h.T)).tolist()


def jacobian_spectrum(sys: GradientLikeSystem, p, tol: float = CRITICAL_TOL) -> list[float]:
    """Real parts of the eigenvalues of DF(p), ascending.

    Raises:
        ValueError: |F(p)| > tol
    """
    p = np.asarray(p, dtype=float)
    residual = float(np.linalg.norm(sys.field(p)))
    if residual > tol:
        raise ValueError(
            f"Point {p.tolist()} is not an equilibrium of {sys.name}: |F| = {residual:.3e}"
        )
    eigenvalues = linalg.eigvals(np.asarray(sys.jacobian(p), dtype=float))
    return np.sort(eigenvalues.real).tolist()


def _dedup(values, tol: float) -> list[float]:
    merged: list[float] = []
    for value in sorted(values):
        if not merged or value - merged[-1] > tol:
            merged.append(float(value))
    return merged


def set_spectrum(
    target: Potential | GradientLikeSystem,
    C: CriticalSetSample,
    source: SpectrumSource | str = SpectrumSource.HESSIAN,
    dedup_tol: float = DEDUP_TOL,
) -> SpectrumReport:
    """Spectrum of every sampled point and their deduplicated union.

    Args:
        target: Potential (hessian source) or system (either source)
        C: Sample of critical points
        source: Eigenvalues of -D^2V(p) or real parts of eigenvalues of DF(p)
        dedup_tol: Values closer than this merge in the union

    Raises:
        ValueError: A point is rejected; the message names its index
    """
    source = SpectrumSource(source)
    if source is SpectrumSource.HESSIAN:
        potential = target.lyapunov if isinstance(target, GradientLikeSystem) else target
        if potential is None:
            raise ValueError(f"System {target.name} has no potential for a Hessian spectrum")

        def pointwise(p):
            return critical_spectrum(potential, p)

    else:
        if not isinstance(target, GradientLikeSystem):
            raise ValueError("Jacobian spectra need a GradientLikeSystem")

        def pointwise(p):
            return jacobian_spectrum(target, p)

    per_point: list[PointSpectrum] = []
    for i, p in enumerate(C.as_array()):
        try:
            eigenvalues = pointwise(p)
        except ValueError as e:
            raise ValueError(f"Point {i} of '{C.connected_label}' rejected: {e}") from e
        per_point.append(PointSpectrum(point=p.tolist(), eigenvalues=eigenvalues))

    union = _dedup([ev for ps in per_point for ev in ps.eigenvalues], dedup_tol)
    logger.debug(f"Spectrum of {len(per_point)} points ({source.value}): {union}")
    return SpectrumReport(per_point=per_point, union=union, source=source)


def spectral_gap(
    report: SpectrumReport, lower: float, upper: float = 0.0, A: float | None = None
) -> SpectralConditionVerdict:
    """Whether ]lower, upper[ meets the resolvent, and the widest gap's midpoint.

    The witness is the midpoint of the widest open piece of ]lower, upper[ left
    after removing the spectrum; the margin is its half-width.
    """
    if not lower < upper:
        raise ValueError(f"Empty interval ]{lower}, {upper}[")

    gaps: list[tuple[float, float]] = []
    cursor = lower
    for a, b in sorted(report.blocks()):
        if b < lower or a > upper:
            continue
        if a > cursor:
            gaps.append((cursor, a))
        cursor = max(cursor, b)
    if cursor < upper:
        gaps.append((cursor, upper))

    if not gaps:
        return SpectralConditionVerdict(A=A, lower=lower, holds=False)

    left, right = max(gaps, key=lambda g: g[1] - g[0])
    return SpectralConditionVerdict(
        A=A,
        lower=lower,
        holds=True,
        witness_mu=0.5 * (left + right),
        margin=0.5 * (right - left),
    )


def spectral_condition(report: SpectrumReport, A: float) -> SpectralConditionVerdict:
    """Whether ]-1/(2A), 0[ meets the resolvent of the sampled set.

    Raises:
        ValueError: A <= 0
    """
    if A <= 0:
        raise ValueError(f"Step-size constant A must be positive, got {A}")
    return spectral_gap(report, lower=-1.0 / (2.0 * A), A=A)


def gap_infimum(report: SpectrumReport, lower: float) -> float | None:
    """inf of ]lower, 0[ intersected with the resolvent, None when empty."""
    if lower >= 0:
        return None
    for a, b in report.blocks():
        if a <= lower < b:
            return b if b < 0 else None
    return lower


def critical_step_scale(report: SpectrumReport) -> float:
    """Largest A* such that the spectral condition holds for every A < A*.

    Only a block [a, b] with a < 0 <= b can cover ]-1/(2A), 0[, which happens
    once -1/(2A) >= a.
    """
    for a, b in report.blocks():
        if a < 0 <= b:
            return -1.0 / (2.0 * a)
    return float("inf")


def linear_instability_check(
    target: Potential | GradientLikeSystem,
    C: CriticalSetSample,
    source: SpectrumSource | str = SpectrumSource.HESSIAN,
) -> tuple[list[bool], bool]:
    """Per-point linear instability and the verdict for the whole sample.

    A point is linearly unstable when its spectrum has an element > 1e-8. The
    sample is unstable when every point is.
    """
    report = set_spectrum(target, C, source)
    per_point = [max(ps.eigenvalues) > INSTABILITY_TOL for ps in report.per_point]
    return per_point, bool(per_point) and all(per_point)
