import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lifted_mfg.errors import AnticipationError, GridMismatch, HorizonExceeded
from lifted_mfg.paths import (
    HistoryView,
    Path,
    TimeGrid,
    concatenate,
    cumulative_cadlag_integral,
    insert_plateau,
    path_from_function,
    sample_brownian,
    sample_smooth_path,
    zero_path,
)


def identity_path(steps=100, T=1.0):
    grid = TimeGrid(T, steps)
    return path_from_function(grid, lambda s: s)


class TestTimeGrid:
    def test_spacing_and_index(self):
        g = TimeGrid(2.0, 8)
        assert g.dt == 0.25
        assert g.times[-1] == 2.0
        assert g.index(0.75) == 3

    def test_rejects_off_grid_time(self):
        with pytest.raises(ValueError):
            TimeGrid(1.0, 4).index(0.3)

    @pytest.mark.parametrize("T,N", [(-1.0, 4), (0.0, 4), (1.0, 0), (1.0, 2.5)])
    def test_rejects_bad_parameters(self, T, N):
        with pytest.raises(ValueError):
            TimeGrid(T, N)

    def test_epsilon_must_be_multiple_of_dt(self):
        g = TimeGrid(1.0, 10)
        assert g.steps_for(0.3) == 3
        with pytest.raises(ValueError):
            g.steps_for(0.25)


class TestPlateau:
    def test_definition_example(self):
        p = insert_plateau(identity_path(), 0.5, [2.0], 0.25)
        assert float(p(0.6)[0]) == pytest.approx(2.0)
        assert float(p(0.8)[0]) == pytest.approx(0.8)

    def test_zero_path_unit_plateau(self):
        g = TimeGrid(1.0, 10)
        p = insert_plateau(zero_path(g), 0.0, [1.0], g.dt)
        assert float(p(0.0)[0]) == 1.0
        assert float(p(0.05)[0]) == 1.0
        assert float(p(0.1)[0]) == 0.0
        assert p.left_values[1, 0] == 1.0

    def test_is_a_view(self):
        base = identity_path()
        p = insert_plateau(base, 0.5, [2.0], 0.25)
        assert p.base is base

    def test_horizon_exceeded(self):
        with pytest.raises(HorizonExceeded):
            insert_plateau(identity_path(), 0.9, [1.0], 0.2)

    @given(
        start=st.integers(0, 90),
        width=st.integers(1, 10),
        y=st.floats(-5, 5),
        seed=st.integers(0, 10_000),
    )
    def test_reproduces_base_outside_window(self, start, width, y, seed):
        base = sample_brownian(TimeGrid(1.0, 100), 1, seed)
        p = insert_plateau(base, start * 0.01, [y], width * 0.01)
        outside = np.r_[0:start, start + width:101]
        np.testing.assert_array_equal(p.right_values[outside], base.right_values[outside])
        np.testing.assert_array_equal(p.right_values[start:start + width, 0], y)

    def test_present_value_plateau_matches_at_left_endpoint(self):
        base = identity_path()
        p = insert_plateau(base, 0.5, base(0.5), 0.25)
        assert float(p(0.5)[0]) == pytest.approx(0.5)
        assert float(p(0.8)[0]) == pytest.approx(0.8)


class TestConcatenate:
    def test_identity_concatenation(self):
        g = TimeGrid(1.0, 50)
        w = sample_brownian(g, 1, 3)
        out = concatenate(zero_path(g), 0.0, [0.0], w)
        np.testing.assert_array_equal(out.values, w.values)

    def test_history_then_frozen_value(self):
        base = identity_path()
        out = concatenate(base, 0.5, [3.0], zero_path(base.grid))
        np.testing.assert_allclose(out.values[:50, 0], base.values[:50, 0])
        np.testing.assert_array_equal(out.values[50:, 0], 3.0)
        assert out.left_values[50, 0] == pytest.approx(0.5)

    def test_grid_mismatch(self):
        with pytest.raises(GridMismatch):
            concatenate(zero_path(TimeGrid(1.0, 10)), 0.0, [0.0], zero_path(TimeGrid(1.0, 20)))

    @given(k=st.integers(0, 40), j=st.integers(0, 40), y=st.floats(-3, 3), seed=st.integers(0, 1000))
    def test_flow_property(self, k, j, y, seed):
        # Concatenating at t and then at s >= t with the same continuation equals
        # one concatenation at t, exactly at grid points.
        g = TimeGrid(1.0, 40)
        k, j = sorted((k, j))
        w = sample_brownian(g, 1, seed, 1)
        hist = sample_brownian(g, 1, seed, 2)
        once = concatenate(hist, g.times[k], [y], w)
        twice = concatenate(once, g.times[j], once.values[j], w)
        np.testing.assert_allclose(twice.values, once.values, rtol=0, atol=1e-12)


class TestHistoryView:
    def test_strict_non_anticipativity(self):
        h = HistoryView(identity_path(), 50)
        assert h.values.shape == (50, 1)
        with pytest.raises(AnticipationError):
            h[50]
        with pytest.raises(AnticipationError):
            h.at(0.5)
        assert float(h.at(0.49)[0]) == pytest.approx(0.49)

    def test_left_limit_is_readable(self):
        assert float(HistoryView(identity_path(), 50).left_limit[0]) == pytest.approx(0.5)

    def test_trapezoid_is_exact_for_linear_paths(self):
        h = HistoryView(identity_path(), 50)
        assert float(h.integral()[0]) == pytest.approx(0.125, abs=1e-15)
        assert h.map_integral(lambda v: v**2) == pytest.approx(0.5**3 / 3, abs=1e-5)

    def test_integral_of_plateau_path(self):
        base = identity_path()
        p = insert_plateau(base, 0.5, [2.0], 0.25)
        assert float(HistoryView(p, 75).integral()[0]) == pytest.approx(0.125 + 0.5, abs=1e-14)

    def test_cumulative_matches_history(self):
        w = sample_brownian(TimeGrid(1.0, 64), 2, 5)
        cum = cumulative_cadlag_integral(w.right_values, w.left_values, w.grid.dt)
        for n in (0, 1, 17, 64):
            np.testing.assert_allclose(cum[n], HistoryView(w, n).integral(), atol=1e-14)


class TestSampling:
    def test_determinism(self):
        g = TimeGrid(1.0, 4)
        np.testing.assert_array_equal(sample_brownian(g, 1, 7).values, sample_brownian(g, 1, 7).values)
        assert not np.array_equal(sample_brownian(g, 1, 7).values, sample_brownian(g, 1, 8).values)

    def test_pinned_at_zero(self):
        assert np.all(sample_brownian(TimeGrid(1.0, 4), 3, 1).values[0] == 0.0)
        assert np.all(sample_smooth_path(TimeGrid(1.0, 4), 2, 1).values[0] == 0.0)
        with pytest.raises(ValueError):
            Path(TimeGrid(1.0, 2), [[1.0], [0.0], [0.0]])

    def test_brownian_terminal_statistics(self):
        g = TimeGrid(1.0, 4)
        M = 100_000
        ends = np.array([sample_brownian(g, 1, s).values[-1, 0] for s in range(M)])
        assert abs(ends.mean()) < 4 * math.sqrt(1.0 / M)
        assert abs(ends.var() - 1.0) < 0.02

    @given(seed=st.integers(0, 2**31), d=st.integers(1, 3))
    def test_increment_statistics_per_coordinate(self, seed, d):
        g = TimeGrid(2.0, 20_000)
        inc = np.diff(sample_brownian(g, d, seed).values, axis=0)
        var = inc.var(axis=0) * g.steps
        assert np.all(np.abs(var - g.horizon) < 0.05 * g.horizon)
        assert np.all(np.abs(inc.mean(axis=0)) < 4 * math.sqrt(g.dt / g.steps))

    def test_csv_round_trip(self):
        w = sample_brownian(TimeGrid(1.0, 10), 2, 4)
        back = Path.from_csv(w.to_csv())
        np.testing.assert_array_equal(back.values, w.values)
