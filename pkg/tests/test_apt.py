"""Unit tests for interpolated paths, defects, error-rate fits and limit-set estimates."""

import numpy as np
import pytest

from stochgrad_lab.apt import (
    InterpolatedPath,
    apt_defect,
    error_rate,
    fit_error_rate,
    interpolate,
    limit_set_estimate,
    theoretical_error_rate,
)
from stochgrad_lab.errors import EstimationError
from stochgrad_lab.spectrum import set_spectrum, spectral_condition
from stochgrad_lab.stochastic import NoiseModel, StepSchedule, polya_urn, run_sgd
from stochgrad_lab.vectorfield import catalog_critical_set, catalog_system


def _exact_quadratic_path(t_end=6.0, knots=6001):
    taus = np.linspace(0.0, t_end, knots)
    return InterpolatedPath(taus=taus, states=np.exp(-taus)[:, None])


class TestInterpolatedPath:
    """Test the piecewise-affine path."""

    def test_midpoint(self):
        """Knots (0, 0) and (1, 2) give X(0.5) = 1."""
        X = InterpolatedPath(taus=np.array([0.0, 1.0]), states=np.array([[0.0], [2.0]]))
        assert X(0.5) == pytest.approx([1.0])
        assert X([0.25, 0.75]).shape == (2, 1)

    def test_outside_domain(self):
        """Times past the last knot are refused."""
        X = InterpolatedPath(taus=np.array([0.0, 1.0]), states=np.array([[0.0], [2.0]]))
        with pytest.raises(ValueError, match="outside path domain"):
            X(1.5)

    def test_knots_must_increase(self):
        """Repeated knot times are rejected."""
        with pytest.raises(ValueError, match="strictly increasing"):
            InterpolatedPath(taus=np.array([0.0, 0.0]), states=np.zeros((2, 1)))

    def test_single_knot(self):
        """One knot is not a path."""
        with pytest.raises(ValueError, match="two knots"):
            InterpolatedPath(taus=np.array([0.0]), states=np.zeros((1, 1)))

    def test_knots_between(self):
        """Knot times inside a window, ends included."""
        X = InterpolatedPath(taus=np.arange(5.0), states=np.zeros((5, 1)))
        np.testing.assert_array_equal(X.knots_between(1.0, 3.0), [1.0, 2.0, 3.0])

    def test_interpolate_keeps_schedule(self, quadratic):
        """interpolate carries the run's schedule for the theoretical rate."""
        sched = StepSchedule(A=0.5)
        traj = run_sgd(quadratic.lyapunov, [1.0], sched, NoiseModel.zero(), 100, seed=0)
        X = interpolate(traj)
        assert X.schedule == sched
        assert X.end == pytest.approx(sched.tau(100))


class TestDefect:
    """Test apt_defect."""

    def test_exact_flow_path(self, quadratic):
        """A densely sampled flow trajectory has no defect beyond interpolation error."""
        X = _exact_quadratic_path()
        assert apt_defect(X, quadratic, 1.0, 2.0) < 1e-6

    def test_zero_field_is_path_oscillation(self):
        """With F = 0 the defect is sup |X(t + h) - X(t)|."""
        X = interpolate(polya_urn(2000, seed=4))
        sys = catalog_system("polya_zero")
        t, T = 2.0, 1.0
        hs = np.union1d(np.linspace(0.0, T, 100), X.knots_between(t, t + T) - t)
        expected = np.max(np.abs(X(t + hs) - X(t)))
        assert apt_defect(X, sys, t, T) == pytest.approx(expected, abs=1e-12)

    def test_window_monotone(self, quadratic):
        """A shorter window never has a larger defect at the same t."""
        noise = NoiseModel(kind="gaussian_iso", sigma=0.5)
        traj = run_sgd(quadratic.lyapunov, [1.0], StepSchedule(A=1.0), noise, 5000, seed=1)
        X = interpolate(traj)
        short = apt_defect(X, quadratic, 3.0, 0.5, h_points=51)
        full = apt_defect(X, quadratic, 3.0, 1.0, h_points=101)
        assert short <= full + 1e-9

    def test_window_outside_domain(self, quadratic):
        """[t, t + T] must lie inside the path."""
        X = _exact_quadratic_path(t_end=2.0, knots=201)
        with pytest.raises(ValueError, match="outside"):
            apt_defect(X, quadratic, 1.5, 1.0)

    def test_positive_window(self, quadratic):
        """T must be positive."""
        with pytest.raises(ValueError, match="positive"):
            apt_defect(_exact_quadratic_path(), quadratic, 1.0, 0.0)


class TestErrorRateFit:
    """Test fit_error_rate on synthetic defects."""

    def test_exponential(self):
        """e^{-t/2} gives slope -1/2 exactly."""
        t = np.linspace(5.0, 13.0, 9)
        fit = fit_error_rate(t, np.exp(-0.5 * t), T=1.0)
        assert fit.e_hat == pytest.approx(-0.5)
        assert fit.r_squared == pytest.approx(1.0)
        assert fit.lambda_bound == pytest.approx(-0.5)
        assert not fit.minus_infinity

    def test_rescaling_invariance(self):
        """Multiplying every defect by a constant leaves the slope unchanged."""
        t = np.linspace(5.0, 13.0, 9)
        d = np.exp(-0.3 * t) * (1.0 + 0.1 * np.sin(t))
        a = fit_error_rate(t, d, T=1.0)
        b = fit_error_rate(t, 37.0 * d, T=1.0)
        assert a.e_hat == pytest.approx(b.e_hat, abs=1e-12)

    def test_zero_defects_dropped(self):
        """Zeros are removed and counted."""
        t = np.arange(8.0)
        d = np.exp(-t)
        d[2] = 0.0
        fit = fit_error_rate(t, d, T=1.0)
        assert fit.dropped_points == 1
        assert len(fit.t_grid) == 7
        assert fit.e_hat == pytest.approx(-1.0)

    def test_too_few_points(self):
        """Fewer than 5 usable points is an estimation failure."""
        with pytest.raises(EstimationError, match="5 points"):
            fit_error_rate([1.0, 2.0, 3.0, 4.0, 5.0], [1.0, 0.5, 0.0, 0.0, 0.1], T=1.0)

    def test_minus_infinity_flag(self):
        """Super-exponential decay is flagged."""
        t = np.linspace(5.0, 13.0, 9)
        fit = fit_error_rate(t, np.exp(-(t**2)), T=1.0)
        assert fit.e_hat < -5.0
        assert fit.late_slope < fit.early_slope
        assert fit.minus_infinity

    def test_theoretical_rate(self):
        """-1/(2A) only for A/n schedules."""
        assert theoretical_error_rate(StepSchedule(A=2.0)) == pytest.approx(-0.25)
        assert theoretical_error_rate(StepSchedule(A=1.0, beta_sched=0.5)) is None
        assert theoretical_error_rate(StepSchedule(A=1.0, alpha=0.7)) is None
        assert theoretical_error_rate(None) is None


class TestErrorRate:
    """Test error_rate on Robbins-Monro paths."""

    def test_grid_must_increase(self, quadratic):
        """Decreasing grids are rejected."""
        with pytest.raises(ValueError, match="increasing"):
            error_rate(_exact_quadratic_path(), quadratic, [2.0, 1.0, 3.0, 4.0, 4.5])

    def test_harmonic_noise_rate(self, quadratic):
        """gamma_n = 1/n with Gaussian noise decays like e^{-t/2}."""
        noise = NoiseModel(kind="gaussian_iso", sigma=0.5)
        traj = run_sgd(
            quadratic.lyapunov, [1.0], StepSchedule(A=1.0), noise, 200_000, seed=0, stride=1
        )
        fit = error_rate(interpolate(traj), quadratic, np.arange(4.0, 11.01, 0.5), T=1.0)
        assert fit.theoretical == pytest.approx(-0.5)
        assert fit.e_hat == pytest.approx(-0.5, abs=0.3)
        assert fit.lambda_bound <= 0.0

    @pytest.mark.slow
    @pytest.mark.parametrize("A", [0.5, 1.0, 2.0])
    def test_harmonic_noise_rate_long(self, quadratic, A):
        """Median over ten runs of N = 10^7 lands within 20% of -1/(2A)."""
        noise = NoiseModel(kind="gaussian_iso", sigma=0.5)
        N = 10_000_000
        grid = np.linspace(0.3, 0.85, 23) * A * np.log(N)
        slopes = []
        for run in range(10):
            traj = run_sgd(
                quadratic.lyapunov, [1.0], StepSchedule(A=A), noise, N,
                seed=0, run_index=run, stride=1,
            )
            slopes.append(error_rate(interpolate(traj), quadratic, grid, T=1.0).e_hat)
        target = -1.0 / (2.0 * A)
        assert abs(np.median(slopes) - target) <= 0.2 * abs(target)

    @pytest.mark.slow
    def test_window_length_does_not_matter(self, quadratic):
        """T = 0.5 and T = 2 give rates within 0.1 of each other."""
        noise = NoiseModel(kind="gaussian_iso", sigma=0.5)
        traj = run_sgd(
            quadratic.lyapunov, [1.0], StepSchedule(A=1.0), noise, 10_000_000, seed=3, stride=1
        )
        X = interpolate(traj)
        grid = np.arange(5.0, 14.01, 0.5)
        a = error_rate(X, quadratic, grid, T=0.5).e_hat
        b = error_rate(X, quadratic, grid, T=2.0).e_hat
        assert abs(a - b) < 0.1

    @pytest.mark.slow
    def test_log_damped_schedule_is_fast(self, quadratic):
        """beta_sched > 0 gives a slope that keeps falling as the grid moves right."""
        noise = NoiseModel(kind="gaussian_iso", sigma=0.5)
        sched = StepSchedule(A=1.0, beta_sched=0.5)
        early, late, halves = [], [], []
        for run in range(5):
            traj = run_sgd(
                quadratic.lyapunov, [1.0], sched, noise, 10_000_000,
                seed=0, run_index=run, stride=1,
            )
            X = interpolate(traj)
            whole = error_rate(X, quadratic, np.linspace(2.5, 6.5, 17), T=0.5)
            assert whole.theoretical is None
            halves.append((whole.early_slope, whole.late_slope))
            early.append(error_rate(X, quadratic, np.linspace(2.5, 5.0, 11), T=0.5).e_hat)
            late.append(error_rate(X, quadratic, np.linspace(4.0, 6.5, 11), T=0.5).e_hat)
        early_half, late_half = np.median(halves, axis=0)
        assert late_half < early_half
        assert np.median(late) < np.median(early)
        assert np.median(late) < -1.0


class TestLimitSet:
    """Test limit_set_estimate."""

    def test_circle_converges_to_a_point(self, circle):
        """The tail cloud sits on the unit circle and is small."""
        noise = NoiseModel(kind="gaussian_iso", sigma=0.1)
        traj = run_sgd(circle.lyapunov, [1.5, 0.3], StepSchedule(A=0.5), noise, 100_000, seed=0)
        C = catalog_critical_set(circle, n_points=720)
        report = limit_set_estimate(traj, 0.1, C)
        assert report.distance_to_set < 0.05
        assert report.diameter < 0.2
        assert report.cloud_size == report.cloud.shape[0]

    def test_polya_proportion_settles(self):
        """The urn proportion stops moving."""
        report = limit_set_estimate(polya_urn(100_000, seed=5), tail_fraction=0.1)
        assert report.diameter < 0.01
        assert report.distance_to_set is None
        assert 0.0 < report.centroid[0] < 1.0

    @pytest.mark.parametrize("fraction", [0.0, 0.6])
    def test_tail_fraction_range(self, quadratic, fraction):
        """tail_fraction lies in (0, 0.5]."""
        traj = run_sgd(quadratic.lyapunov, [1.0], StepSchedule(A=0.5), NoiseModel.zero(), 10, 0)
        with pytest.raises(ValueError, match="tail_fraction"):
            limit_set_estimate(traj, fraction)

    @pytest.mark.slow
    def test_double_well_minimum(self, double_well):
        """A run started right of the saddle settles at (1, 0)."""
        noise = NoiseModel(kind="gaussian_iso", sigma=0.1)
        traj = run_sgd(
            double_well.lyapunov, [0.5, 0.2], StepSchedule(A=1.0), noise, 1_000_000, seed=0
        )
        report = limit_set_estimate(traj, 0.1)
        assert report.diameter < 1e-2
        assert report.centroid == pytest.approx([1.0, 0.0], abs=0.05)

    @pytest.mark.slow
    def test_circle_runs_settle_on_the_set(self, circle):
        """Twenty runs of 10^6 steps each end in a small cloud on the unit circle."""
        noise = NoiseModel(kind="gaussian_iso", sigma=0.1)
        C = catalog_critical_set(circle, n_points=720)
        for run in range(20):
            traj = run_sgd(
                circle.lyapunov, [1.5, 0.3], StepSchedule(A=0.5), noise, 1_000_000,
                seed=0, run_index=run,
            )
            report = limit_set_estimate(traj, 0.1, C)
            assert report.distance_to_set <= 0.05
            assert report.diameter < 0.2

        verdict = spectral_condition(set_spectrum(circle, C), A=0.5)
        assert verdict.holds
        assert verdict.witness_mu is not None
