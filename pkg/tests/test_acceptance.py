"""The eleven acceptance criteria at their stated tolerances and runtimes.

Each test records one PASS/FAIL line, printed in the terminal summary.
"""

import json
import math
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, ROOT, bundled
from lifted_mfg.compensator import RUNNING_MAX, heat_lifted_solution
from lifted_mfg.control import ControlPerturbation, MeanFieldValue, PartialObservationValue, problem1_feedback_rule, problem2_feedback_rule
from lifted_mfg.errors import NonConvergence
from lifted_mfg.meanflow import MeanFlowFunctional
from lifted_mfg.paths import TimeGrid, zero_path
from lifted_mfg.riccati import solve_filter_covariance, solve_problem1, solve_problem2, solve_problem3, solve_problem4, separation_report
from lifted_mfg.simulate import SimConfig, estimate_cost, particle_fixed_point, simulate_kalman, simulate_problem1_cost
from lifted_mfg.verify import (
    compensator_oracle_battery,
    heat_battery,
    master_equation_discrepancy,
    optimizer_identity_errors,
    prototype_orders,
    random_battery,
    run_battery,
    running_max_nonconvergence,
)

GRID = TimeGrid(1.0, 1000)


class Criterion:
    """Collects (label, ok) parts and the runtime of one criterion."""

    def __init__(self, number: int, title: str, budget: float):
        self.number, self.title, self.budget = number, title, budget
        self.parts: list[tuple[str, bool]] = []

    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def check(self, label: str, ok: bool):
        self.parts.append((label, bool(ok)))

    def __exit__(self, exc_type, exc, tb):
        elapsed = time.perf_counter() - self.start
        if exc_type is None:
            self.check(f"runtime {elapsed:.1f}s < {self.budget:g}s", elapsed < self.budget)
        else:
            self.check(f"raised {exc_type.__name__}", False)
        ok = all(p[1] for p in self.parts)
        detail = "; ".join(label + ("" if good else " [FAILED]") for label, good in self.parts)
        ACCEPTANCE_LINES.append(f"{'PASS' if ok else 'FAIL'} criterion {self.number:2d} ({self.title}): {detail}")
        if exc_type is None:
            assert ok, detail
        return False


def mean_field_value(data, grid):
    traj = solve_problem2(data, grid)
    return MeanFieldValue(traj, data, MeanFlowFunctional("problem2", traj, data))


def test_criterion_01_problem1_closed_forms():
    expected = {"xx": 0.0, "yy": -0.5, "xy": 0.5, "const": -0.125, "ii": -0.5, "xi": 0.5, "yi": -0.5}
    with Criterion(1, "Problem 1 closed forms", 1.0) as c:
        traj = solve_problem1(GRID)
        err = max(abs(float(traj[k][0]) - v) for k, v in expected.items())
        c.check(f"max coefficient error {err:.2e} < 1e-6", err < 1e-6)


def test_criterion_02_problem1_monte_carlo():
    cfg = bundled("p1")
    with Criterion(2, "Problem 1 value by Monte Carlo", 60.0) as c:
        out = simulate_problem1_cost(SimConfig(100_000, GRID, cfg.seed, "p1"), problem1_feedback_rule(GRID))
        gap = abs(out.cost + 0.125)
        c.check(f"cost {out.cost:.5f}, |cost + 0.125| {gap:.5f} < 3 SE {3 * out.stderr:.5f}", gap < 3 * out.stderr)


def test_criterion_03_compensator_oracles():
    with Criterion(3, "compensator oracle battery", 30.0) as c:
        checks = compensator_oracle_battery(GRID, seed=0)
        err = max(ch.error for ch in checks)
        order = min(prototype_orders(checks).values())
        zero = max(ch.at_present_value for ch in checks)
        c.check(f"max error {err:.2e} < 1e-4", err < 1e-4)
        c.check(f"min order {order:.3f} >= 0.9", order >= 0.9)
        c.check(f"max at y = present value {zero:.2e} < 1e-4", zero < 1e-4)


def test_criterion_04_compensated_heat_equation():
    with Criterion(4, "compensated heat equation", 30.0) as c:
        res = float(np.max(np.abs(heat_battery(GRID, 20, seed=0))))
        c.check(f"max residual {res:.2e} < 1e-3 on 20 points", res < 1e-3)
        c.check("raw running max compensator raises NonConvergence",
                isinstance(running_max_nonconvergence(GRID, seed=0), NonConvergence))
        try:
            heat_lifted_solution(RUNNING_MAX, 0.5, zero_path(GRID), [0.0])
            refused = False
        except NonConvergence:
            refused = True
        c.check("raw running max terminal data refused", refused)


def test_criterion_05_problem2_residuals(p2_scalar, p2_d2):
    with Criterion(5, "Problem 2 residuals", 120.0) as c:
        for name, data in (("scalar", p2_scalar), ("d=2", p2_d2)):
            report = run_battery(mean_field_value(data, GRID), random_battery(GRID, data.dim, 20, seed=0), "both")
            a, f = report.max_abs("analytic"), report.max_abs("fd")
            c.check(f"{name} analytic {a:.2e} < 1e-6", a < 1e-6)
            c.check(f"{name} fd {f:.2e} < 1e-3", f < 1e-3)


def test_criterion_06_problem2_fixed_point():
    cfg = bundled("p2_scalar")
    with open(os.path.join(ROOT, "calibration", "fixed_point_m1e6.json"), encoding="utf-8") as fh:
        calib = json.load(fh)
    with Criterion(6, "Problem 2 particle fixed point", 180.0) as c:
        c.check(f"calibration at M={calib['particles']}", calib["particles"] >= 1_000_000)
        value = mean_field_value(cfg.data, GRID)
        out = particle_fixed_point(SimConfig(100_000, GRID, cfg.seed, "p2", cfg.data), value.traj, value.mean)
        dev = out.max_deviation
        c.check(f"max deviation {dev:.4f} < {calib['threshold']}", dev < calib["threshold"])
        c.check(f"max deviation {dev:.4f} < calibrated envelope {calib['envelope_at_target']:.4f}",
                dev < calib["envelope_at_target"])


def test_criterion_07_master_equation(p2_scalar, p2_d2):
    with Criterion(7, "master-equation cross-check", 5.0) as c:
        for name, data in (("scalar", p2_scalar), ("d=2", p2_d2)):
            gap = master_equation_discrepancy(data, solve_problem2(data, GRID), points=50)
            c.check(f"{name} {gap:.2e} < 1e-10", gap < 1e-10)


def test_criterion_08_problem3_fixed_point(p3_data):
    with Criterion(8, "Problem 3 fixed point", 30.0) as c:
        traj = solve_problem3(p3_data, GRID)
        a = np.asarray(traj["vol_control"])
        target = np.array([float(p3_data.target_vol(t)[0]) for t in GRID.times])
        gap = float(np.max(np.abs(a * (1.0 + traj["xx"][:, 0, 0] + traj["xm"][:, 0, 0]) - target)))
        c.check(f"fixed-point identity {gap:.2e} < 1e-12", gap < 1e-12)
        opt = float(np.max(optimizer_identity_errors(100, seed=0)))
        c.check(f"optimizer vs grid search {opt:.2e} < 1e-4", opt < 1e-4)


def test_criterion_09_separation(p4_scalar, p4_d2):
    grid = TimeGrid(1.0, 10_000)
    with Criterion(9, "separation principle", 60.0) as c:
        for name, data in (("scalar", p4_scalar), ("d=2", p4_d2)):
            p4, p2 = solve_problem4(data, grid), solve_problem2(data, grid)
            rep = separation_report(data, p4, p2)
            c.check(f"{name} symmetry {rep.max_symmetry_defect:.1e} < 1e-8", rep.max_symmetry_defect < 1e-8)
            c.check(f"{name} hessian gap {rep.max_gamma_defect:.1e} < 1e-8", rep.max_gamma_defect < 1e-8)
            value = PartialObservationValue(p4, data, MeanFlowFunctional("problem4-eta", p4, data), p2)
            gap = 0.0
            for p in random_battery(grid, data.dim, 20, seed=0, two_paths=True):
                fb = value.feedback(p.t, p.omega, p.gamma, p.y, p.z)
                gap = max(gap, float(np.max(np.abs(fb["raw"] - fb["separation"]))))
            c.check(f"{name} feedback forms {gap:.1e} < 1e-8", gap < 1e-8)


def test_criterion_10_kalman(p4_scalar):
    with Criterion(10, "Kalman consistency", 180.0) as c:
        pi1 = float(solve_filter_covariance(p4_scalar, GRID).values[-1, 0, 0])
        gap = abs(pi1 - math.sqrt(2.0) * math.tanh(math.sqrt(2.0)))
        c.check(f"covariance at T {pi1:.10f}, gap {gap:.1e} < 1e-6", gap < 1e-6)
        p4, p2 = solve_problem4(p4_scalar, GRID), solve_problem2(p4_scalar, GRID)
        flow = MeanFlowFunctional("problem4-eta", p4, p4_scalar)
        out = simulate_kalman(SimConfig(100_000, GRID, 3, "p4", p4_scalar), p4, flow, full_information=p2)
        rel = out.extras["variance_relative_error"]
        for t in (0.25, 0.5, 1.0):
            c.check(f"variance at t={t} within {rel[t]:.2%} < 5%", rel[t] < 0.05)
        dev = out.extras["filter_deviation"]
        c.check(f"filter deviation {dev:.2e} < 10 dt", dev < 10 * GRID.dt)


def _raises_cost(c, name, base, perturbed):
    for out in perturbed:
        rise = out.cost - base.cost
        se = math.hypot(base.stderr, out.stderr)
        c.check(f"{name} {out.extras['label']} +{rise:.4f} > 2 SE {2 * se:.4f}", rise > 2 * se)


def test_criterion_11_optimality():
    with Criterion(11, "optimality under perturbation", 300.0) as c:
        p1 = bundled("p1")
        base = problem1_feedback_rule(GRID)
        bumps = [base.perturbed(ControlPerturbation("bump", d, lambda t: 4.0 * math.sin(math.pi * t), f"bump {d:+}"))
                 for d in (0.1, -0.1, 0.2, -0.2)]
        outs = simulate_problem1_cost(SimConfig(100_000, GRID, p1.seed, "p1"), [base] + bumps)
        _raises_cost(c, "Problem 1", outs[0], outs[1:])

        cfg = bundled("p2_optimality")
        grid = TimeGrid(cfg.horizon, cfg.steps)
        value = mean_field_value(cfg.data, grid)
        rule = problem2_feedback_rule(value.traj)
        gains = [rule.perturbed(ControlPerturbation("gain", d, label=f"gain {d:+}")) for d in (0.1, -0.1, 0.2, -0.2)]
        outs = estimate_cost(SimConfig(cfg.particles, grid, cfg.seed, "p2", cfg.data), value.mean, [rule] + gains)
        _raises_cost(c, "Problem 2", outs[0], outs[1:])
