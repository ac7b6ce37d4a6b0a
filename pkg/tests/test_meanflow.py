import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import assert_close
from lifted_mfg.compensator import compensated_time_derivative_fd
from lifted_mfg.meanflow import MeanFlowFunctional
from lifted_mfg.paths import Path, TimeGrid, sample_brownian, zero_path
from lifted_mfg.riccati import LQData, integrate_forward, solve_problem2, solve_problem3, solve_problem4


@pytest.fixture(scope="module")
def flows(p2_d2, p3_data, p4_d2, grid1000):
    p4 = solve_problem4(p4_d2, grid1000)
    return {
        "problem2": MeanFlowFunctional("problem2", solve_problem2(p2_d2, grid1000), p2_d2),
        "problem3": MeanFlowFunctional("problem3", solve_problem3(p3_data, grid1000), p3_data),
        "problem4-mu": MeanFlowFunctional("problem4-mu", p4, p4_d2),
        "problem4-eta": MeanFlowFunctional("problem4-eta", p4, p4_d2),
    }


def paths_for(flow, seed):
    omega = sample_brownian(flow.grid, flow.dim, seed, 0)
    gamma = sample_brownian(flow.grid, flow.dim, seed, 3)
    return omega, gamma


def evaluate(flow, k, omega, gamma, dy=0.0):
    y = omega.values[k] + dy
    if flow.kind == "problem4-eta":
        return flow.at_index(k, omega, y, gamma, gamma.values[k])
    return flow.at_index(k, omega, y)


def test_zero_path_gives_propagated_initial_mean(flows, grid1000):
    for kind in ("problem2", "problem3", "problem4-mu"):
        f = flows[kind]
        om = zero_path(grid1000, f.dim)
        for k in (0, 250, 1000):
            expected = f.propagator[k] @ f.data.init_mean
            assert_close(f.at_index(k, om, np.zeros(f.dim)), expected, 1e-14)


def test_initial_value(flows, grid1000):
    for f in flows.values():
        om = zero_path(grid1000, f.dim)
        args = (om, np.zeros(f.dim), om, np.zeros(f.dim)) if f.kind == "problem4-eta" else (om, np.zeros(f.dim))
        assert_close(f(0.0, *args), f.data.init_mean, 1e-14)


@pytest.mark.parametrize("kind", ["problem2", "problem3", "problem4-mu", "problem4-eta"])
@given(seed=st.integers(0, 10_000))
def test_along_matches_pointwise(flows, kind, seed):
    f = flows[kind]
    omega, gamma = paths_for(f, seed)
    batch = f.along(omega.values, gamma.values)
    for k in (0, 1, 137, 500, 1000):
        assert_close(batch[k], evaluate(f, k, omega, gamma), 1e-12)


@pytest.mark.parametrize("kind", ["problem2", "problem3", "problem4-mu", "problem4-eta"])
@given(seed=st.integers(0, 10_000), dy1=st.floats(-2, 2), dy2=st.floats(-2, 2))
def test_affine_in_present_value(flows, kind, seed, dy1, dy2):
    f = flows[kind]
    omega, gamma = paths_for(f, seed)
    k = 400
    a, b = evaluate(f, k, omega, gamma, dy1), evaluate(f, k, omega, gamma, dy2)
    mid = evaluate(f, k, omega, gamma, 0.5 * (dy1 + dy2))
    assert_close(0.5 * (a + b), mid, 1e-12)
    dy = np.asarray(dy1 - dy2) * np.ones(f.dim)
    assert_close(a - b, f.y_gradient(f.grid.times[k]) @ dy, 1e-12)


def test_filter_z_gradient(flows):
    f = flows["problem4-eta"]
    omega, gamma = paths_for(f, 5)
    k = 300
    y = omega.values[k]
    base = f.at_index(k, omega, y, gamma, gamma.values[k])
    for j in range(f.dim):
        dz = np.zeros(f.dim)
        dz[j] = 0.5
        moved = f.at_index(k, omega, y, gamma, gamma.values[k] + dz)
        assert_close(moved - base, f.z_gradient(f.grid.times[k]) @ dz, 1e-12)
    with pytest.raises(ValueError):
        flows["problem2"].z_gradient(0.1)


def test_mean_solves_linear_sde(p2_d2):
    """Euler scheme for dm = A m dt + common_vol dW converges to the lifted mean at first order."""
    fine = TimeGrid(1.0, 8000)
    flow = MeanFlowFunctional("problem2", solve_problem2(p2_d2, fine), p2_d2)
    omega = sample_brownian(fine, 2, 11)
    lifted = flow.along(omega.values)
    m = np.array(p2_d2.init_mean, dtype=float)
    worst = 0.0
    for k in range(fine.steps):
        m = m + flow.generator[k] @ m * fine.dt + p2_d2.common_vol @ (omega.values[k + 1] - omega.values[k])
        worst = max(worst, float(np.max(np.abs(m - lifted[k + 1]))))
    assert worst < 5e-3


def test_noise_free_filter_matches_ode(p4_d2, grid1000):
    """With zero common noise and zero observation paths the filter solves a linear ODE."""
    data = p4_d2.replace(common_vol=0.0)
    traj = solve_problem4(data, grid1000)
    eta = MeanFlowFunctional("problem4-eta", traj, data)
    zero = zero_path(grid1000, 2)
    mu_traj = integrate_forward(lambda t, m: _mean_gen(data, traj, t) @ m, data.init_mean, grid1000)

    oracle = integrate_forward(lambda t, e: _filter_gen(data, traj, t) @ e
                               + (data.mean_drift(t) - traj.trajectory("xm")(t)) @ mu_traj(t),
                               data.init_mean, grid1000)
    values = eta.along(zero.values, zero.values)
    # history integrals use the trapezoid rule, so agreement is at second order in dt
    assert_close(values, oracle.values, 1e-6)


def _mean_gen(data, traj, t):
    return data.drift(t) + data.mean_drift(t) - sum(traj.trajectory(n)(t) for n in ("xx", "xm", "xe"))


def _filter_gen(data, traj, t):
    h, prec = data.obs_matrix, data.obs_precision
    cov = traj.trajectory("filter_cov")(t)
    return data.drift(t) - traj.trajectory("xx")(t) - traj.trajectory("xe")(t) - cov @ h.T @ prec @ h


@pytest.mark.parametrize("kind", ["problem2", "problem3", "problem4-eta"])
def test_compensated_rate_matches_finite_differences(flows, kind):
    f = flows[kind]
    omega, gamma = paths_for(f, 21)
    for t in (0.2, 0.55):
        k = f.grid.index(t)
        for dy in (0.0, 0.7):
            y = omega.values[k] + dy
            if kind == "problem4-eta":
                z = gamma.values[k] - 0.4
                exact = f.compensated_rate(t, omega, y, gamma, z)
                est = compensated_time_derivative_fd(f.lifted(), t, omega, y, gamma=gamma, z=z)
            else:
                exact = f.compensated_rate(t, omega, y)
                est = compensated_time_derivative_fd(f.lifted(), t, omega, y)
            assert_close(est.value, exact, 1e-4)


def test_kind_validation(p2_d2, grid1000):
    traj = solve_problem2(p2_d2, grid1000)
    with pytest.raises(ValueError):
        MeanFlowFunctional("problem3", traj, p2_d2)
    with pytest.raises(ValueError):
        MeanFlowFunctional("nope", traj, p2_d2)
