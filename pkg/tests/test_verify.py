import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import assert_close, random_lq_data
from lifted_mfg.control import MeanFieldValue, PartialObservationValue, Problem1Value
from lifted_mfg.meanflow import MeanFlowFunctional
from lifted_mfg.paths import TimeGrid, path_from_function
from lifted_mfg.riccati import LQData, solve_problem1, solve_problem2, solve_problem3, solve_problem4
from lifted_mfg.verify import (
    grid_search_minimum,
    master_equation_coefficients,
    master_equation_discrepancy,
    optimizer_identity_errors,
    random_battery,
    reconstruction_check_problem2,
    residual_problem2,
    run_battery,
)


def mean_field_value(data, grid, problem="p2"):
    if problem == "p3":
        traj = solve_problem3(data, grid)
        return MeanFieldValue(traj, data, MeanFlowFunctional("problem3", traj, data))
    traj = solve_problem2(data, grid)
    return MeanFieldValue(traj, data, MeanFlowFunctional("problem2", traj, data))


@pytest.fixture(scope="module")
def values(p2_scalar, p2_d2, p3_data, p4_d2, grid1000):
    p4 = solve_problem4(p4_d2, grid1000)
    return {
        "p1": (Problem1Value(solve_problem1(grid1000)), 1, False),
        "p2_scalar": (mean_field_value(p2_scalar, grid1000), 1, False),
        "p2_d2": (mean_field_value(p2_d2, grid1000), 2, False),
        "p3": (mean_field_value(p3_data, grid1000, "p3"), 1, False),
        "p4_d2": (PartialObservationValue(p4, p4_d2, MeanFlowFunctional("problem4-eta", p4, p4_d2)), 2, True),
    }


@pytest.mark.parametrize("name", ["p1", "p2_scalar", "p2_d2", "p3", "p4_d2"])
def test_residual_battery(values, grid1000, name):
    value, dim, two = values[name]
    report = run_battery(value, random_battery(grid1000, dim, 20, seed=0, two_paths=two), "both")
    assert report.max_abs("analytic") < 1e-6
    assert report.max_abs("fd") < 1e-3
    assert len(report.to_csv().splitlines()) == 21


def test_residual_modes(values, grid1000):
    value, dim, _ = values["p2_d2"]
    report = run_battery(value, random_battery(grid1000, dim, 3, seed=1), "analytic")
    assert all(p.fd is None for p in report.points)
    assert np.isnan(report.max_abs("fd"))


def test_finite_difference_floor_is_second_order(p2_d2):
    """On one smooth path the finite-difference residual shrinks about fourfold per halving of dt."""
    floors = []
    for n in (500, 1000, 2000):
        g = TimeGrid(1.0, n)
        value = mean_field_value(p2_d2, g)
        omega = path_from_function(g, lambda s: np.array([np.sin(3 * s), np.cos(2 * s) - 1]), d=2)
        pts = [residual_problem2(value, t, np.array([0.3, -0.5]), omega, omega.values[g.index(t)] + 0.4, "fd")
               for t in (0.2, 0.4, 0.6)]
        floors.append(max(abs(p.fd) for p in pts))
    ratios = np.array(floors[:-1]) / np.array(floors[1:])
    assert np.all((ratios > 3.5) & (ratios < 4.5)), ratios


def test_battery_needs_room_for_ladder():
    with pytest.raises(ValueError):
        random_battery(TimeGrid(1.0, 8), 1, 2, seed=0)


class TestMaster:
    def test_hand_case(self):
        rates = master_equation_coefficients(LQData(1, 1.0))
        got = rates(0.0, np.array([[0.5]]), np.zeros((1, 1)), np.zeros((1, 1)))
        assert float(got.xx[0, 0]) == pytest.approx(0.25, abs=1e-12)
        assert float(got.xm[0, 0]) == pytest.approx(0.0, abs=1e-12)

    def test_zero_data(self):
        rates = master_equation_coefficients(LQData(2, 1.0))
        z = np.zeros((2, 2))
        got = rates(0.3, z, z, z)
        for m in (got.xx, got.xm, got.mm):
            assert np.all(np.abs(m) < 1e-14)
        assert got.const == 0.0

    @pytest.mark.parametrize("name", ["p2_scalar", "p2_d2"])
    def test_bundled(self, request, grid1000, name):
        data = request.getfixturevalue(name)
        assert master_equation_discrepancy(data, solve_problem2(data, grid1000)) < 1e-10

    @given(seed=st.integers(0, 10_000), dim=st.integers(1, 3))
    def test_random_models(self, seed, dim):
        data = random_lq_data(np.random.default_rng(seed), dim)
        traj = solve_problem2(data, TimeGrid(1.0, 100))
        assert master_equation_discrepancy(data, traj, points=10, seed=seed) < 1e-10


class TestOptimizer:
    def test_identity(self):
        assert np.max(optimizer_identity_errors(100, seed=0)) < 1e-4

    def test_grid_search(self):
        assert grid_search_minimum(lambda a: (a - 0.3) ** 2, -5.0, 5.0) == pytest.approx(0.3, abs=1e-6)


class TestReconstruction:
    """The identity holds in expectation; single steps carry O(dt) martingale noise."""

    def test_accumulated_defect_is_centred_on_a_fine_grid(self, p2_d2):
        value = mean_field_value(p2_d2, TimeGrid(1.0, 800))
        rep = reconstruction_check_problem2(value, [np.zeros(2), np.array([1.0, -0.5])], paths=400, seed=0)
        assert rep.within(3.0), rep

    def test_accumulated_bias_shrinks_with_dt(self, p2_d2):
        bias = []
        for n in (100, 800):
            value = mean_field_value(p2_d2, TimeGrid(1.0, n))
            rep = reconstruction_check_problem2(value, [np.zeros(2), np.array([1.0, -0.5])], paths=400, seed=0)
            bias.append(abs(rep.aggregate_mean) * np.sqrt(rep.dt))
        assert bias[1] < bias[0] / 4

    def test_step_defect_scales_with_dt(self, p2_scalar):
        rms = []
        for n in (100, 400):
            value = mean_field_value(p2_scalar, TimeGrid(1.0, n))
            rms.append(reconstruction_check_problem2(value, [np.array([0.5])], paths=100, seed=1).rms_step_defect)
        assert 3.5 < rms[0] / rms[1] < 4.5
