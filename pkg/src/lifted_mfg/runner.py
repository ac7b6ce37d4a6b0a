"""Subcommand implementations behind the CLI.

Each command takes a :class:`RunConfig` and an output directory, writes its
artifacts plus ``summary.json`` and returns a :class:`RunResult` whose failed
checks decide the exit status.  Outputs contain no timings or host data, so
identical inputs give byte-identical files.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .control import (
    MeanFieldValue,
    PartialObservationValue,
    Problem1Value,
    problem1_feedback_rule,
    problem2_feedback_rule,
    problem3_feedback_rule,
)
from .meanflow import MeanFlowFunctional
from .paths import TimeGrid, sample_brownian, zero_path
from .riccati import (
    CoefficientTrajectories,
    problem1_closed_form,
    separation_report,
    solve_problem1,
    solve_problem2,
    solve_problem3,
    solve_problem4,
)
from .simulate import (
    SimConfig,
    estimate_cost,
    particle_fixed_point,
    simulate_kalman,
    simulate_problem1_cost,
)
from .verify import (
    compensator_oracle_battery,
    heat_battery,
    master_equation_discrepancy,
    optimizer_identity_errors,
    prototype_orders,
    random_battery,
    run_battery,
    running_max_nonconvergence,
)


@dataclass(frozen=True)
class Check:
    name: str
    value: float
    threshold: float
    kind: str = "max"  # "max": value <= threshold; "min": value >= threshold

    @property
    def passed(self) -> bool:
        if not math.isfinite(self.value):
            return False
        return self.value <= self.threshold if self.kind == "max" else self.value >= self.threshold

    def as_dict(self) -> dict:
        return {"name": self.name, "value": self.value, "threshold": self.threshold, "kind": self.kind,
                "passed": self.passed}


@dataclass
class RunResult:
    command: str
    problem: str
    checks: list[Check] = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    files: list[str] = field(default_factory=list)

    @property
    def failures(self) -> list[Check]:
        return [c for c in self.checks if not c.passed]

    @property
    def ok(self) -> bool:
        return not self.failures

    def to_json(self) -> str:
        body = {
            "command": self.command,
            "problem": self.problem,
            "passed": self.ok,
            "checks": [c.as_dict() for c in self.checks],
            "failures": [c.name for c in self.failures],
            "summary": self.summary,
            "files": sorted(os.path.basename(f) for f in self.files),
        }
        return json.dumps(_plain(body), indent=2, sort_keys=True) + "\n"


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _finish(result: RunResult, out: str) -> RunResult:
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "summary.json")
    result.files.append(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(result.to_json())
    return result


def grid_of(cfg: RunConfig) -> TimeGrid:
    return TimeGrid(cfg.horizon, cfg.steps)


def solve_trajectories(cfg: RunConfig, grid: TimeGrid | None = None) -> CoefficientTrajectories:
    grid = grid or grid_of(cfg)
    if cfg.problem == "p1":
        return solve_problem1(grid)
    if cfg.problem == "p2":
        return solve_problem2(cfg.data, grid)
    if cfg.problem == "p3":
        return solve_problem3(cfg.data, grid)
    return solve_problem4(cfg.data, grid)


def value_of(cfg: RunConfig, traj: CoefficientTrajectories, full_information=None):
    if cfg.problem == "p1":
        return Problem1Value(traj)
    if cfg.problem in ("p2", "p3"):
        kind = "problem2" if cfg.problem == "p2" else "problem3"
        return MeanFieldValue(traj, cfg.data, MeanFlowFunctional(kind, traj, cfg.data))
    return PartialObservationValue(traj, cfg.data, MeanFlowFunctional("problem4-eta", traj, cfg.data), full_information)


def _problem1_closed_form_check(cfg: RunConfig, traj: CoefficientTrajectories) -> Check:
    exact = problem1_closed_form(traj.grid)
    err = max(float(np.max(np.abs(np.reshape(traj[k], -1) - exact[k]))) for k in exact)
    return Check("p1_closed_form", err, cfg.thresholds["closed_form"])


# ---------------------------------------------------------------------------
# Commands


def run_solve(cfg: RunConfig, out: str) -> RunResult:
    traj = solve_trajectories(cfg)
    res = RunResult("solve", cfg.problem)
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "trajectories.csv")
    traj.to_csv(path)
    res.files.append(path)
    res.summary = {
        "steps": cfg.steps,
        "horizon": cfg.horizon,
        "at_zero": {k: np.asarray(traj[k][0]) for k in traj.names},
    }
    if cfg.problem == "p1":
        res.checks.append(_problem1_closed_form_check(cfg, traj))
    return _finish(res, out)


def run_simulate(cfg: RunConfig, out: str) -> RunResult:
    grid = grid_of(cfg)
    th = cfg.thresholds
    res = RunResult("simulate", cfg.problem)
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "simulation.csv")
    sim = SimConfig(cfg.particles, grid, cfg.seed, cfg.problem, cfg.data)
    traj = solve_trajectories(cfg, grid)
    if cfg.problem == "p1":
        o = simulate_problem1_cost(sim, problem1_feedback_rule(grid))
        target = float(traj["const"][0])
        res.checks.append(Check("p1_cost_vs_value", abs(o.cost - target), th["cost_se"] * o.stderr + th["cost_dt"] * grid.dt))
        res.summary = {"cost": o.cost, "stderr": o.stderr, "value": target}
        o.to_csv(path)
    elif cfg.problem in ("p2", "p3"):
        value = value_of(cfg, traj)
        fp = particle_fixed_point(sim, traj, value.mean)
        fb = problem2_feedback_rule(traj) if cfg.problem == "p2" else problem3_feedback_rule(traj)
        cost = estimate_cost(sim, value.mean, fb)
        target = value.expected_initial_value()
        res.checks.append(Check(f"{cfg.problem}_fixed_point_deviation", fp.max_deviation, th["fixed_point"]))
        res.checks.append(Check(f"{cfg.problem}_cost_vs_value", abs(cost.cost - target),
                                th["cost_se"] * cost.stderr + th["cost_dt"] * grid.dt))
        fp.cost, fp.stderr = cost.cost, cost.stderr
        fp.extras = {"value": target, "cost_at_mean": cost.extras["cost_at_mean"]}
        res.summary = {"cost": cost.cost, "stderr": cost.stderr, "value": target,
                       "max_deviation": fp.max_deviation}
        fp.to_csv(path)
    else:
        p2 = solve_problem2(cfg.data, grid)
        o = simulate_kalman(sim, traj, MeanFlowFunctional("problem4-eta", traj, cfg.data), full_information=p2)
        for frac, err in sorted(o.extras["variance_relative_error"].items()):
            res.checks.append(Check(f"p4_variance_rel_error_t{frac:g}", err, th["variance_rel"]))
        res.checks.append(Check("p4_filter_deviation", o.extras["filter_deviation"], th["filter_deviation_dt"] * grid.dt))
        res.summary = {
            "filter_deviation": o.extras["filter_deviation"],
            "error_variance": {f"{k:g}": v for k, v in sorted(o.extras["error_variance"].items())},
            "filter_cov": {f"{k:g}": traj["filter_cov"][grid.index(k * grid.horizon)] for k in o.extras["error_variance"]},
        }
        o.extras = {"filter_deviation": o.extras["filter_deviation"]}
        o.to_csv(path)
    res.files.append(path)
    return _finish(res, out)


def run_verify(cfg: RunConfig, out: str) -> RunResult:
    grid = grid_of(cfg)
    th = cfg.thresholds
    traj = solve_trajectories(cfg, grid)
    value = value_of(cfg, traj)
    dim = 1 if cfg.data is None else cfg.data.dim
    points = random_battery(grid, dim, cfg.battery, cfg.seed, two_paths=cfg.problem == "p4")
    report = run_battery(value, points, "both", cfg.tol)
    res = RunResult("verify", cfg.problem)
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "residuals.csv")
    report.to_csv(path)
    res.files.append(path)
    res.checks.append(Check("residual_analytic", report.max_abs("analytic"), th["residual_analytic"]))
    res.checks.append(Check("residual_fd", report.max_abs("fd"), th["residual_fd"]))
    if cfg.problem == "p1":
        res.checks.append(_problem1_closed_form_check(cfg, traj))
    elif cfg.problem == "p2":
        res.checks.append(Check("master_equation", master_equation_discrepancy(cfg.data, traj, 50, cfg.seed), th["master"]))
    elif cfg.problem == "p3":
        ctrl = np.reshape(traj["vol_control"], -1)
        target = np.array([float(cfg.data.target_vol(t)[0]) for t in grid.times])
        den = 1.0 + np.reshape(traj["xx"], -1) + np.reshape(traj["xm"], -1)
        res.checks.append(Check("p3_fixed_point_identity", float(np.max(np.abs(ctrl * den - target))),
                                th["fixed_point_identity"]))
        res.checks.append(Check("p3_optimizer_identity", float(np.max(optimizer_identity_errors(100, cfg.seed))),
                                th["optimizer"]))
    res.summary = {"battery": cfg.battery, "analytic": report.stats("analytic"), "fd": report.stats("fd")}
    return _finish(res, out)


def run_compensator_check(cfg: RunConfig, out: str) -> RunResult:
    grid = grid_of(cfg)
    th = cfg.thresholds
    checks = compensator_oracle_battery(grid, seed=cfg.seed, tol=cfg.tol)
    heat = heat_battery(grid, cfg.battery, cfg.seed, cfg.tol)
    refused = running_max_nonconvergence(grid, cfg.seed, cfg.tol)
    res = RunResult("compensator-check", cfg.problem)
    res.checks.append(Check("prototype_error", max(c.error for c in checks), th["compensator_error"]))
    res.checks.append(Check("prototype_order", min(prototype_orders(checks).values()), th["compensator_order"], "min"))
    res.checks.append(Check("compensator_at_present_value", max(c.at_present_value for c in checks),
                            th["compensator_zero"]))
    res.checks.append(Check("heat_residual_fd", float(np.max(np.abs(heat))), th["heat"]))
    res.checks.append(Check("running_max_nonconvergence", 1.0 if refused is not None else 0.0, 1.0, "min"))
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, "compensator.csv")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("case,t,s,y,analytic,extrapolated,order,at_present_value\n")
        for c in checks:
            fh.write(",".join([c.case] + [format(v, ".17g") for v in
                                          (c.t, c.s, c.y, c.analytic, c.extrapolated, c.order, c.at_present_value)]) + "\n")
    res.files.append(path)
    res.summary = {"prototype_points": len(checks), "heat_points": int(heat.size),
                   "running_max": str(refused) if refused is not None else "converged"}
    return _finish(res, out)


def run_separation_check(cfg: RunConfig, out: str) -> RunResult:
    if cfg.problem != "p4":
        raise ValueError("separation-check needs a p4 config")
    grid = grid_of(cfg)
    th = cfg.thresholds
    p4 = solve_problem4(cfg.data, grid)
    p2 = solve_problem2(cfg.data, grid)
    rep = separation_report(cfg.data, p4, p2)
    value = value_of(cfg, p4, full_information=p2)
    gap = 0.0
    for p in random_battery(grid, cfg.data.dim, cfg.battery, cfg.seed, two_paths=True):
        fb = value.feedback(p.t, p.omega, p.gamma, p.y, p.z)
        gap = max(gap, float(np.max(np.abs(fb["raw"] - fb["separation"]))))
    res = RunResult("separation-check", cfg.problem)
    res.checks.append(Check("symmetry_defect", rep.max_symmetry_defect, th["separation"]))
    res.checks.append(Check("gamma_defect", rep.max_gamma_defect, th["separation"]))
    res.checks.append(Check("mean_filter_coefficient", rep.max_mean_filter_coefficient, th["separation"]))
    res.checks.append(Check("literal_mean_filter_expression", rep.max_literal_mean_filter_expression, th["separation"]))
    res.checks.append(Check("feedback_forms", gap, th["feedback_forms"]))
    res.summary = {"steps": cfg.steps}
    return _finish(res, out)


def run_evaluate(cfg: RunConfig, out: str, t: float, x, y, z=None, path_seed: int | None = None) -> RunResult:
    """Value and feedback at one point; the path is zero or a Brownian sample from ``path_seed``."""
    grid = grid_of(cfg)
    traj = solve_trajectories(cfg, grid)
    full = solve_problem2(cfg.data, grid) if cfg.problem == "p4" else None
    value = value_of(cfg, traj, full)
    dim = 1 if cfg.data is None else cfg.data.dim
    omega = zero_path(grid, dim) if path_seed is None else sample_brownian(grid, dim, path_seed, 0)
    x = np.asarray(x, dtype=float).reshape(dim)
    y = np.asarray(y, dtype=float).reshape(dim)
    res = RunResult("evaluate", cfg.problem)
    if cfg.problem == "p1":
        res.summary = {"value": value.value(t, x[0], omega, y[0]), "feedback": value.feedback(t, omega, y[0])}
    elif cfg.problem in ("p2", "p3"):
        res.summary = {"value": value.value(t, x, omega, y), "feedback": value.feedback(t, x, omega, y),
                       "mean": value.mean(t, omega, y)}
    else:
        gamma = zero_path(grid, dim) if path_seed is None else sample_brownian(grid, dim, path_seed, 1)
        z = np.zeros(dim) if z is None else np.asarray(z, dtype=float).reshape(dim)
        res.summary = {"value": value.value(t, x, omega, gamma, y, z),
                       "feedback": value.feedback(t, omega, gamma, y, z)}
    res.summary.update({"t": grid.times[grid.index(t)], "x": x, "y": y})
    return _finish(res, out)


COMMANDS = {
    "solve": run_solve,
    "simulate": run_simulate,
    "verify": run_verify,
    "compensator-check": run_compensator_check,
    "separation-check": run_separation_check,
}

__all__ = ["Check", "RunResult", "COMMANDS", "run_evaluate", "solve_trajectories", "value_of", "grid_of"]
