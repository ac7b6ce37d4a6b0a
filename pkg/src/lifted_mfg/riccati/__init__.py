"""Coefficient ODE systems: data, integrators and the four problem solvers."""

from .data import FIELD_NAMES, LQData, TimeFunction
from .integrate import Stack, Trajectory, fundamental_solution, integrate_backward, integrate_forward, rk4_step
from .problems import (
    PROBLEM1_NAMES,
    CoefficientTrajectories,
    SeparationReport,
    filter_covariance_rhs,
    gronwall_bound,
    lambda_tilde_residual,
    optimal_volatility,
    problem1_closed_form,
    problem1_rhs,
    problem2_rhs,
    problem3_rhs,
    problem4_rhs,
    separation_report,
    solve_filter_covariance,
    solve_problem1,
    solve_problem2,
    solve_problem3,
    solve_problem4,
    volatility_control,
)

__all__ = [
    "FIELD_NAMES",
    "LQData",
    "TimeFunction",
    "Stack",
    "Trajectory",
    "fundamental_solution",
    "integrate_backward",
    "integrate_forward",
    "rk4_step",
    "PROBLEM1_NAMES",
    "CoefficientTrajectories",
    "SeparationReport",
    "filter_covariance_rhs",
    "gronwall_bound",
    "lambda_tilde_residual",
    "optimal_volatility",
    "problem1_closed_form",
    "problem1_rhs",
    "problem2_rhs",
    "problem3_rhs",
    "problem4_rhs",
    "separation_report",
    "solve_filter_covariance",
    "solve_problem1",
    "solve_problem2",
    "solve_problem3",
    "solve_problem4",
    "volatility_control",
]
