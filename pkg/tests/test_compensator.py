import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lifted_mfg.compensator import (
    DEFAULT_TOL,
    RUNNING_INTEGRAL,
    RUNNING_MAX,
    LiftedFunctional,
    SmoothedRunningMax,
    compensated_time_derivative_fd,
    compensator_fd,
    empirical_order,
    heat_lifted_solution,
    heat_residual_fd,
    history_integral_functional,
    prototype_compensator_analytic,
    prototype_functional,
    richardson_table,
    running_integral_functional,
    running_max_functional,
    smoothed_max_samples,
    smoothed_running_max_functional,
    time_derivative_fd,
)
from lifted_mfg.errors import AnticipationError, HorizonExceeded, NonConvergence
from lifted_mfg.paths import TimeGrid, path_from_function, sample_brownian, sample_smooth_path, zero_path
from lifted_mfg.verify import compensator_oracle_battery, heat_battery, prototype_orders, running_max_nonconvergence

GRID = TimeGrid(1.0, 1000)
IDENTITY = path_from_function(GRID, lambda s: s)


def smooth_functionals():
    """Smooth lifted functionals with nontrivial history dependence."""
    return {
        "history integral": history_integral_functional(),
        "running integral": running_integral_functional(1.0),
        "quadratic history": LiftedFunctional(
            lambda h, y: np.array([h.map_integral(lambda v: v**2) * y[0] + math.sin(h.t) * y[0] ** 2])
        ),
        "prototype": prototype_functional(lambda v: v * v, lambda v: 1.0 - v, 1.0),
        "smoothed max": smoothed_running_max_functional(4.0, 1.0),
    }


class TestCompensatorExamples:
    def test_history_integral_off_present_value(self):
        est = compensator_fd(history_integral_functional(), 0.5, IDENTITY, [2.0])
        assert float(est) == pytest.approx(1.5, abs=1e-10)

    def test_no_history_dependence(self):
        f = LiftedFunctional(lambda h, y: np.array([h.t * y[0] ** 2]))
        assert float(compensator_fd(f, 0.3, IDENTITY, [2.0])) == pytest.approx(0.0, abs=1e-12)

    def test_constant(self):
        f = LiftedFunctional(lambda h, y: np.array([3.0]))
        assert float(compensator_fd(f, 0.3, IDENTITY, [2.0])) == 0.0
        assert float(compensated_time_derivative_fd(f, 0.3, IDENTITY, [2.0])) == 0.0

    def test_at_present_value(self):
        assert abs(float(compensator_fd(history_integral_functional(), 0.5, IDENTITY, [0.5]))) < 1e-10

    @given(t_idx=st.integers(0, 980), y=st.floats(-3, 3), seed=st.integers(0, 10_000))
    def test_compensated_rate_of_history_integral_is_y(self, t_idx, y, seed):
        omega = sample_brownian(GRID, 1, seed)
        est = compensated_time_derivative_fd(history_integral_functional(), GRID.times[t_idx], omega, [y])
        assert float(est) == pytest.approx(y, abs=1e-9)

    def test_horizon_exceeded(self):
        with pytest.raises(HorizonExceeded):
            compensator_fd(history_integral_functional(), 1.0, IDENTITY, [1.0])

    def test_guard_catches_anticipating_functional(self):
        f = LiftedFunctional(lambda h, y: h[h.n])
        with pytest.raises(AnticipationError):
            compensator_fd(f, 0.5, IDENTITY, [1.0])


class TestRichardson:
    def test_exact_on_polynomial_quotients(self):
        eps = [16, 8, 4, 2, 1]
        q = [3.0 + 2.0 * e + 0.5 * e * e - 0.1 * e**3 for e in eps]
        assert richardson_table(q)[-1][-1] == pytest.approx(3.0, abs=1e-9)

    def test_empirical_order(self):
        assert empirical_order([8.0, 4.0, 2.0, 1.0]) == pytest.approx(1.0)


class TestPrototype:
    def test_closed_form_examples(self):
        om = np.array([0.5])
        assert prototype_compensator_analytic(lambda v: v, lambda v: 0.0, 1.0, 0.5, om, 2.0) == pytest.approx(0.75)
        assert prototype_compensator_analytic(lambda v: 0.0, lambda v: v * v, 0.5, 0.5, np.array([1.0]), 2.0) == 3.0
        assert prototype_compensator_analytic(lambda v: v * v, lambda v: v, 0.7, 0.2, om, 0.5) == 0.0

    def test_fd_matches_closed_form_example(self):
        f = prototype_functional(lambda v: v, lambda v: 0.0 * v, 1.0)
        assert float(compensator_fd(f, 0.5, IDENTITY, [2.0])) == pytest.approx(0.75, abs=1e-6)

    def test_battery_accuracy_order_and_present_value(self):
        checks = compensator_oracle_battery(GRID, seed=0)
        assert max(c.error for c in checks) < DEFAULT_TOL
        assert max(c.at_present_value for c in checks) < DEFAULT_TOL
        assert min(prototype_orders(checks).values()) >= 0.9

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_order_across_seeds(self, seed):
        checks = compensator_oracle_battery(GRID, seed=seed)
        assert min(prototype_orders(checks).values()) >= 0.9


class TestInvariants:
    @pytest.mark.parametrize("name", list(smooth_functionals()))
    @given(t_idx=st.integers(0, 960), dy=st.floats(-1.5, 1.5), seed=st.integers(0, 10_000))
    def test_additivity(self, name, t_idx, dy, seed):
        f = smooth_functionals()[name]
        omega = sample_smooth_path(GRID, 1, seed)
        t = GRID.times[t_idx]
        y = omega.values[t_idx] + dy
        full = compensated_time_derivative_fd(f, t, omega, y)
        parts = time_derivative_fd(f, t, omega, y).value + compensator_fd(f, t, omega, y).value
        assert abs(float(np.reshape(full.value, -1)[0] - np.reshape(parts, -1)[0])) < 10 * DEFAULT_TOL

    @pytest.mark.parametrize("name", list(smooth_functionals()))
    @given(t_idx=st.integers(0, 960), seed=st.integers(0, 10_000))
    def test_vanishes_at_present_value(self, name, t_idx, seed):
        f = smooth_functionals()[name]
        omega = sample_smooth_path(GRID, 1, seed)
        est = compensator_fd(f, GRID.times[t_idx], omega, omega.values[t_idx])
        # the extrapolation stopping rule bounds the last correction, not the error, hence the slack
        assert abs(float(est)) < 10 * DEFAULT_TOL


class TestHeatEquation:
    def test_running_integral_closed_form(self):
        assert heat_lifted_solution(RUNNING_INTEGRAL, 0.25, zero_path(GRID), [1.0]) == pytest.approx(0.75)

    def test_terminal_condition(self):
        omega = sample_brownian(GRID, 1, 2)
        expected = float(np.trapezoid(omega.values[:, 0], GRID.times))
        assert heat_lifted_solution(RUNNING_INTEGRAL, 1.0, omega, [5.0]) == pytest.approx(expected, abs=1e-12)

    def test_fd_residual_battery(self):
        assert np.max(np.abs(heat_battery(GRID, 20, seed=0))) < 1e-3

    def test_smoothed_residual_single_point(self):
        f = running_integral_functional(1.0)
        assert abs(heat_residual_fd(f, 0.4, sample_brownian(GRID, 1, 9), [0.3])) < 1e-3

    def test_raw_running_max_is_refused(self):
        with pytest.raises(NonConvergence):
            heat_lifted_solution(RUNNING_MAX, 0.5, zero_path(GRID), [0.0])

    def test_raw_running_max_compensator_diverges(self):
        err = running_max_nonconvergence(GRID, seed=0)
        assert isinstance(err, NonConvergence)
        q = np.abs(np.ravel(err.estimate.quotients))
        assert q[-1] > q[0]

    def test_raw_running_max_tagged(self):
        assert running_max_functional().tag == "jump-sensitive-unknown"

    def test_smoothed_compensator_converges(self):
        # sharper smoothing needs a finer ladder but converges for every fixed sharpness
        grid = TimeGrid(1.0, 4000)
        omega = sample_smooth_path(grid, 1, 4)
        values = [compensator_fd(smoothed_running_max_functional(N, 1.0), 0.3, omega, [0.7]) for N in (1.0, 4.0, 16.0)]
        assert all(e.converged for e in values)

    def test_smoothing_monotone_toward_running_max(self):
        g = TimeGrid(1.0, 200)
        omega = sample_brownian(g, 1, 1)
        rows = smoothed_max_samples([1.0, 2.0, 4.0, 8.0, 16.0, 64.0], 100, omega, [0.2], 4000, seed=3)
        smoothed, raw = rows[:-1], rows[-1]
        assert np.all(np.diff(smoothed, axis=0) >= -1e-12)
        assert np.all(smoothed <= raw[None, :] + 1e-12)
        assert raw.mean() - smoothed[-1].mean() < 0.1

    def test_smoothed_estimate_has_stderr(self):
        est = heat_lifted_solution(SmoothedRunningMax(4.0), 0.5, sample_brownian(TimeGrid(1.0, 100), 1, 0), [0.1],
                                   samples=2000)
        assert est.stderr > 0 and est.samples == 2000
        with pytest.raises(ValueError):
            SmoothedRunningMax(0.0)
