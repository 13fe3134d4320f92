"""Unit tests for flow integration, variational flows, resolvent and expansion rate."""

import numpy as np
import pytest

from stochgrad_lab.errors import FlowDivergenceError
from stochgrad_lab.flow import (
    FlowIntegrator,
    expansion_rate,
    flow_map,
    flow_samples,
    expansion_gap_condition,
    lyapunov_decrease_check,
    resolvent_test,
    variational_flow,
    variational_matrix,
)
from stochgrad_lab.schemas import ResolventStatus
from stochgrad_lab.vectorfield import catalog_critical_set, catalog_system


@pytest.fixture
def linear():
    return catalog_system("linear", [1.0])


@pytest.fixture
def saddle_linear():
    """F = diag(-1, 2) x."""
    return catalog_system("linear", [1.0, -2.0])


class TestFlowMap:
    """Test flow_map and flow_samples against closed forms."""

    def test_linear_decay(self, linear):
        """linear(1) from 1 at t = 1 gives e^-1."""
        assert flow_map(linear, [1.0], 1.0)[0] == pytest.approx(np.exp(-1.0), abs=1e-6)

    def test_backward_time(self, linear):
        """Negative times run the flow backward."""
        assert flow_map(linear, [1.0], -1.0)[0] == pytest.approx(np.e, rel=1e-6)

    def test_quartic_closed_form(self, quartic):
        """x(t) = x0 (1 + 2 x0^2 t)^(-1/2) gives 1/3 at t = 4."""
        assert flow_map(quartic, [1.0], 4.0)[0] == pytest.approx(1.0 / 3.0, abs=1e-5)

    def test_equilibrium_is_fixed(self, circle):
        """Points of the unit circle do not move."""
        np.testing.assert_allclose(flow_map(circle, [1.0, 0.0], 7.0), [1.0, 0.0], atol=1e-12)

    def test_zero_time_is_identity(self, quadratic):
        """Phi_0 is the identity."""
        np.testing.assert_array_equal(flow_map(quadratic, [0.3], 0.0), [0.3])

    @pytest.mark.parametrize(
        ("name", "x0", "s", "t"),
        [
            ("circle", [1.5, 0.3], 0.4, 1.1),
            ("double_well", [0.2, 0.7], 1.3, 2.0),
            ("quartic", [1.2], 0.5, 3.0),
            ("swirl", [1.0, -0.5], 0.7, 0.9),
            ("double_well", [0.9, 0.1], -0.3, -0.6),
        ],
    )
    def test_semigroup(self, name, x0, s, t):
        """Phi_t(Phi_s(x)) = Phi_{s+t}(x)."""
        sys = catalog_system(name)
        composed = flow_map(sys, flow_map(sys, x0, s), t)
        direct = flow_map(sys, x0, s + t)
        np.testing.assert_allclose(composed, direct, rtol=1e-7, atol=1e-9)

    def test_non_finite_time(self, quadratic):
        """Infinite times are rejected."""
        with pytest.raises(ValueError, match="finite"):
            flow_map(quadratic, [0.3], np.inf)

    def test_divergence(self):
        """Exponential growth past the norm cap raises."""
        sys = catalog_system("linear", [-1.0])
        with pytest.raises(FlowDivergenceError):
            flow_map(sys, [1.0], 40.0)

    def test_samples_on_grid(self, quadratic):
        """flow_samples matches flow_map at every grid time."""
        times = np.array([0.0, 0.5, 1.0, 2.0])
        samples = flow_samples(quadratic, [2.0], times)
        assert samples.shape == (4, 1)
        np.testing.assert_allclose(samples[:, 0], 2.0 * np.exp(-times), rtol=1e-7)

    def test_samples_reject_mixed_signs(self, quadratic):
        """Grids must not cross t = 0."""
        with pytest.raises(ValueError):
            flow_samples(quadratic, [1.0], [-1.0, 1.0])


class TestLyapunovDecrease:
    """Test lyapunov_decrease_check."""

    def test_double_well(self, double_well):
        """Gradient flow decreases V."""
        assert lyapunov_decrease_check(double_well, [0.5, 0.5], [0.0, 1.0, 2.0, 4.0])

    def test_quadratic(self, quadratic):
        """V drops from 1/2 to e^-2/2 over [0, 1]."""
        assert lyapunov_decrease_check(quadratic, [1.0], [0.0, 1.0])

    def test_equilibrium_rejected(self, circle):
        """Starting on an equilibrium violates the precondition."""
        with pytest.raises(ValueError, match="equilibrium"):
            lyapunov_decrease_check(circle, [1.0, 0.0], [0.0, 1.0])

    def test_needs_potential(self, linear):
        """Systems without V are refused."""
        with pytest.raises(ValueError, match="no Lyapunov"):
            lyapunov_decrease_check(linear, [1.0], [0.0, 1.0])


class TestVariationalFlow:
    """Test the variational equation and the flow derivative."""

    def test_neutral_shift(self, linear):
        """lambda = -1 cancels DF = -1."""
        assert variational_flow(linear, [1.0], [1.0], 10.0, lam=-1.0)[0] == pytest.approx(
            1.0, abs=1e-4
        )

    def test_decay(self, linear):
        """lambda = 0 gives e^-t."""
        assert variational_flow(linear, [1.0], [1.0], 5.0)[0] == pytest.approx(
            np.exp(-5.0), abs=1e-6
        )

    def test_growth(self, linear):
        """lambda = -2 gives e^t."""
        assert variational_flow(linear, [1.0], [1.0], 5.0, lam=-2.0)[0] == pytest.approx(
            np.exp(5.0), rel=1e-3
        )

    def test_zero_vector(self, linear):
        """The initial vector must be nonzero."""
        with pytest.raises(ValueError, match="nonzero"):
            variational_flow(linear, [1.0], [0.0], 1.0)

    def test_matrix_matches_finite_differences(self, circle):
        """DPhi_t(x) agrees with centered differences of the flow."""
        x = np.array([1.3, 0.4])
        t, h = 0.7, 1e-4
        jac = variational_matrix(circle, x, t)
        fd = np.column_stack(
            [
                (flow_map(circle, x + h * e, t) - flow_map(circle, x - h * e, t)) / (2 * h)
                for e in np.eye(2)
            ]
        )
        np.testing.assert_allclose(jac, fd, atol=1e-4)


class TestResolvent:
    """Test resolvent_test against closed-form spectra."""

    def test_linear_resolvent(self, linear):
        """lambda = -0.5 lies in the resolvent of linear(1)."""
        C = catalog_critical_set(linear)
        verdict = resolvent_test(linear, C, -0.5)
        assert verdict.status == ResolventStatus.IN_RESOLVENT
        assert verdict.in_resolvent is True

    def test_linear_spectrum(self, linear):
        """lambda = -1 is the spectrum of linear(1)."""
        C = catalog_critical_set(linear)
        verdict = resolvent_test(linear, C, -1.0)
        assert verdict.status == ResolventStatus.IN_SPECTRUM
        assert verdict.in_resolvent is False

    def test_circle_neutral_direction(self, circle):
        """0 belongs to the spectrum of the unit circle."""
        C = catalog_critical_set(circle, n_points=4)
        assert resolvent_test(circle, C, 0.0).in_resolvent is False

    def test_circle_gap(self, circle):
        """-1 lies between the circle's spectral values -2 and 0."""
        C = catalog_critical_set(circle, n_points=4)
        assert resolvent_test(circle, C, -1.0).in_resolvent is True

    @pytest.mark.parametrize("lam", [-3.0, -1.5, -0.5, 0.5, 1.5, 3.0])
    def test_diagonal_resolvent_grid(self, saddle_linear, lam):
        """Away from {-1, 2} every lambda is classified into the resolvent."""
        C = catalog_critical_set(saddle_linear)
        assert resolvent_test(saddle_linear, C, lam).in_resolvent is True

    @pytest.mark.parametrize("lam", [-1.0, 2.0])
    def test_diagonal_spectrum_points(self, saddle_linear, lam):
        """The eigenvalues themselves are in the spectrum."""
        C = catalog_critical_set(saddle_linear)
        assert resolvent_test(saddle_linear, C, lam).in_resolvent is False

    def test_direction_count(self, saddle_linear):
        """Default directions: m coordinate directions plus 2m random ones per point."""
        C = catalog_critical_set(saddle_linear)
        assert resolvent_test(saddle_linear, C, 0.5).directions_used == 6

    def test_invalid_horizon(self, linear):
        """T_max must be positive."""
        with pytest.raises(ValueError):
            resolvent_test(linear, catalog_critical_set(linear), 0.0, T_max=0.0)


class TestExpansionRate:
    """Test expansion_rate and the gap condition."""

    def test_diagonal(self, saddle_linear):
        """diag(-1, 2) has expansion rate -1."""
        C = catalog_critical_set(saddle_linear)
        assert expansion_rate(saddle_linear, C, T=20.0) == pytest.approx(-1.0, abs=0.05)

    def test_linear(self, linear):
        """A single eigenvalue -1."""
        assert expansion_rate(linear, catalog_critical_set(linear)) == pytest.approx(-1.0, abs=0.05)

    def test_double_well_saddle(self, double_well):
        """Eigenvalues {1, -1} at the saddle; the smallest is -1."""
        C = catalog_critical_set(double_well, "saddle")
        assert expansion_rate(double_well, C) == pytest.approx(-1.0, abs=0.1)

    def test_rejects_non_equilibrium(self, quadratic):
        """Samples must be equilibria."""
        from stochgrad_lab.vectorfield import CriticalSetSample

        C = CriticalSetSample(points=[[0.5]], tolerance=1e-10)
        with pytest.raises(ValueError, match="not an equilibrium"):
            expansion_rate(quadratic, C)

    def test_gap_condition(self):
        """e < min(0, expansion)."""
        assert expansion_gap_condition(-2.0, -1.0)
        assert not expansion_gap_condition(-0.5, -1.0)
        assert not expansion_gap_condition(0.1, 1.0)

    def test_custom_integrator(self, linear):
        """Looser tolerances still give the closed form."""
        integ = FlowIntegrator(rtol=1e-6, atol=1e-9)
        assert flow_map(linear, [1.0], 1.0, integ)[0] == pytest.approx(np.exp(-1.0), abs=1e-5)
