"""Coefficient systems of the four model problems.

Series are named after the monomial they multiply in the quadratic value
function: ``xx`` (state-state), ``xm`` (state-mean), ``mm`` (mean-mean),
``ee`` (filter-filter), ``xe`` (state-filter), ``const``.  Problem 1 works with
(x, y, I) where I is the running integral of the common-noise path.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from ..errors import FeasibilityViolation, PreconditionWarning
from ..paths import TimeGrid
from .data import LQData
from .integrate import (
    DEFAULT_BOUND,
    DEFAULT_SINGULAR_TOL,
    Stack,
    Trajectory,
    fundamental_solution,
    integrate_backward,
    integrate_forward,
)

# Denominator floor for the volatility-control fixed point.
FEASIBILITY_TOL = 1e-8

PROBLEM1_NAMES = ("xx", "yy", "xy", "const", "ii", "xi", "yi")


@dataclass(frozen=True, eq=False)
class CoefficientTrajectories:
    """Named coefficient samples on a grid plus their time derivatives."""

    problem: str
    grid: TimeGrid
    series: Mapping[str, np.ndarray]
    rates: Mapping[str, np.ndarray]

    def __post_init__(self):
        for arr in list(self.series.values()) + list(self.rates.values()):
            arr.setflags(write=False)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.series[name]

    def __contains__(self, name: str) -> bool:
        return name in self.series

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.series)

    def at(self, name: str, t: float) -> np.ndarray:
        return self.series[name][self.grid.index(t)]

    def rate(self, name: str, t: float) -> np.ndarray:
        return self.rates[name][self.grid.index(t)]

    def trajectory(self, name: str) -> Trajectory:
        return Trajectory(self.grid, np.array(self.series[name]), np.array(self.rates[name]))

    def to_csv(self, target=None, names=None) -> str | None:
        """Long format ``t,name,i,j,value``; scalars use i=j=0, vectors j=0."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "name", "i", "j", "value"])
        for k, t in enumerate(self.grid.times):
            for name in names or self.names:
                v = np.asarray(self.series[name][k])
                if v.ndim == 0:
                    w.writerow([_fmt(t), name, 0, 0, _fmt(v)])
                elif v.ndim == 1:
                    for i, x in enumerate(v):
                        w.writerow([_fmt(t), name, i, 0, _fmt(x)])
                else:
                    for i in range(v.shape[0]):
                        for j in range(v.shape[1]):
                            w.writerow([_fmt(t), name, i, j, _fmt(v[i, j])])
        text = buf.getvalue()
        if target is None:
            return text
        with open(target, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        return None


def _fmt(x) -> str:
    return format(float(x), ".17g")


def _from_trajectory(problem: str, grid: TimeGrid, stack: Stack, traj: Trajectory, extra=None, extra_rates=None):
    series = stack.unpack(np.asarray(traj.values))
    rates = stack.unpack(np.asarray(traj.rates))
    series = {k: np.array(v) for k, v in series.items()}
    rates = {k: np.array(v) for k, v in rates.items()}
    if extra:
        series.update({k: np.array(v) for k, v in extra.items()})
        rates.update({k: np.array(v) for k, v in (extra_rates or {}).items()})
    for k in series:
        rates.setdefault(k, np.full_like(series[k], np.nan))
    return CoefficientTrajectories(problem, grid, series, rates)


# ---------------------------------------------------------------------------
# Problem 1: path-dependent terminal cost x * int_0^T w


def problem1_rhs(state: np.ndarray) -> np.ndarray:
    xx, yy, xy, _const, ii, xi, yi = state
    return np.array(
        [
            2.0 * xx * xx,
            -2.0 * yi + 2.0 * xy * xy,
            -xi + 2.0 * xx * xy,
            -xx - yy,
            2.0 * xi * xi,
            2.0 * xx * xi,
            -ii + 2.0 * xy * xi,
        ]
    )


def problem1_terminal() -> np.ndarray:
    return np.array([0.0, 0.0, 0.0, 0.0, 0.0, 0.5, 0.0])


def solve_problem1(grid: TimeGrid, bound: float = DEFAULT_BOUND) -> CoefficientTrajectories:
    traj = integrate_backward(lambda t, s: problem1_rhs(s), problem1_terminal(), grid, bound)
    series = {n: np.array(traj.values[:, i]) for i, n in enumerate(PROBLEM1_NAMES)}
    rates = {n: np.array(traj.rates[:, i]) for i, n in enumerate(PROBLEM1_NAMES)}
    return CoefficientTrajectories("p1", grid, series, rates)


def problem1_closed_form(grid: TimeGrid) -> dict[str, np.ndarray]:
    r = grid.horizon - grid.times
    return {
        "xx": np.zeros_like(r),
        "yy": -0.5 * r**3,
        "xy": 0.5 * r,
        "const": -0.125 * r**4,
        "ii": -0.5 * r,
        "xi": np.full_like(r, 0.5),
        "yi": -0.5 * r**2,
    }


# ---------------------------------------------------------------------------
# Problem 2: mean field game with common noise


def problem2_rhs(data: LQData, t: float, xx, xm, mm) -> dict[str, np.ndarray]:
    """Derivatives of (xx, xm, mm, const) at time t."""
    b, bb = data.drift(t), data.mean_drift(t)
    q, qb, s = data.running_state_cost(t), data.running_mean_cost(t), data.running_mean_scale(t)
    c0 = data.common_diffusion
    gen = b + bb - xx - xm
    d_xx = xx.T @ xx - xx.T @ b - b.T @ xx - (q + qb)
    d_xm = xm.T @ xm - xm.T @ (b + bb - xx) + xx.T @ xm - xx.T @ bb - b.T @ xm + qb @ s
    d_mm = -gen.T @ mm - mm.T @ gen + xm.T @ xm - xm.T @ bb - bb.T @ xm - s.T @ qb @ s
    d_const = -0.5 * np.trace(data.diffusion @ xx) - 0.5 * np.trace(c0 @ mm) - np.trace(c0 @ xm)
    return {"xx": d_xx, "xm": d_xm, "mm": d_mm, "const": np.asarray(d_const)}


def problem2_terminal(data: LQData) -> dict[str, np.ndarray]:
    q, qb, s = data.terminal_state_cost, data.terminal_mean_cost, data.terminal_mean_scale
    return {"xx": q + qb, "xm": -qb @ s, "mm": s.T @ qb @ s, "const": np.asarray(0.0)}


def solve_problem2(
    data: LQData,
    grid: TimeGrid,
    bound: float = DEFAULT_BOUND,
    singular_tol: float = DEFAULT_SINGULAR_TOL,
    check: bool = True,
) -> CoefficientTrajectories:
    """Backward RK4 for (xx, xm, mm, const), then the forward mean propagator."""
    _check_grid(data, grid)
    if check:
        data.check_mean_field_assumptions()
    d = data.dim
    stack = Stack({"xx": (d, d), "xm": (d, d), "mm": (d, d), "const": ()})

    def rhs(t, flat):
        p = stack.unpack(flat)
        return stack.pack(problem2_rhs(data, t, p["xx"], p["xm"], p["mm"]))

    traj = integrate_backward(rhs, stack.pack(problem2_terminal(data)), grid, bound)
    part = stack.unpack(np.asarray(traj.values))
    part_rates = stack.unpack(np.asarray(traj.rates))
    xx_t = Trajectory(grid, np.array(part["xx"]), np.array(part_rates["xx"]))
    xm_t = Trajectory(grid, np.array(part["xm"]), np.array(part_rates["xm"]))

    def generator(t):
        return data.drift(t) + data.mean_drift(t) - xx_t(t) - xm_t(t)

    phi = fundamental_solution(generator, grid, singular_tol=singular_tol, bound=bound)
    gen = np.array([generator(t) for t in grid.times])
    return _from_trajectory(
        "p2",
        grid,
        stack,
        traj,
        extra={"mean_propagator": phi.values, "mean_generator": gen},
        extra_rates={"mean_propagator": phi.rates},
    )


def lambda_tilde_residual(data: LQData, traj: CoefficientTrajectories) -> float:
    """Max residual of the closed equation for xx + xm along solved trajectories."""
    worst = 0.0
    for k, t in enumerate(traj.grid.times):
        lt = traj["xx"][k] + traj["xm"][k]
        d_lt = traj.rates["xx"][k] + traj.rates["xm"][k]
        b, bb = data.drift(t), data.mean_drift(t)
        q, qb, s = data.running_state_cost(t), data.running_mean_cost(t), data.running_mean_scale(t)
        rhs = lt.T @ lt - b.T @ lt - lt.T @ (b + bb) - (q + qb - qb @ s)
        worst = max(worst, float(np.max(np.abs(d_lt - rhs))))
    return worst


def gronwall_bound(data: LQData, grid: TimeGrid) -> np.ndarray:
    """Solution M of M' = -M b - b^T M - (q + qbar), M_T = q + qbar (upper bound for xx)."""
    terminal = data.terminal_state_cost + data.terminal_mean_cost

    def rhs(t, m):
        b = data.drift(t)
        return -m @ b - b.T @ m - (data.running_state_cost(t) + data.running_mean_cost(t))

    return integrate_backward(rhs, terminal, grid).values


# ---------------------------------------------------------------------------
# Problem 3: controlled common-noise volatility (d = 1)


def problem3_rhs(data: LQData, t: float, xx, xm, mm) -> dict[str, np.ndarray]:
    b, bb = float(data.drift(t)[0, 0]), float(data.mean_drift(t)[0, 0])
    q, qb = float(data.running_state_cost(t)[0, 0]), float(data.running_mean_cost(t)[0, 0])
    s = float(data.running_mean_scale(t)[0, 0])
    sig2 = float(data.vol[0, 0] ** 2)
    g, l0, g0 = (float(np.reshape(v, -1)[0]) for v in (xx, xm, mm))
    control = volatility_control(data, t, g, l0)
    target = float(data.target_vol(t)[0])
    d_xx = -2.0 * b * g - (q + qb)
    d_xm = -l0 * b - g * bb - l0 * (b + bb) + s * qb
    d_mm = -2.0 * g0 * (b + bb) - 2.0 * l0 * bb - s * qb * s
    d_const = -0.5 * sig2 * g - 0.5 * control**2 * (g + 2.0 * l0 + g0) - 0.5 * (control - target) ** 2
    return {"xx": _m11(d_xx), "xm": _m11(d_xm), "mm": _m11(d_mm), "const": np.asarray(d_const)}


def _m11(v: float) -> np.ndarray:
    return np.full((1, 1), float(v))


def volatility_control(data: LQData, t: float, xx: float, xm: float) -> float:
    """Fixed point (1 + xx + xm)^-1 * target volatility."""
    if 1.0 + xx <= FEASIBILITY_TOL:
        raise FeasibilityViolation(f"1 + xx = {1.0 + xx:.3e} <= 0 at t={t:.6g}")
    den = 1.0 + xx + xm
    if abs(den) < FEASIBILITY_TOL:
        raise FeasibilityViolation(f"1 + xx + xm = {den:.3e} vanishes at t={t:.6g}")
    return float(data.target_vol(t)[0]) / den


def optimal_volatility(hess: float, cross: float, target: float) -> float:
    """argmin_a { a^2 hess / 2 + a cross + (a - target)^2 / 2 } = (target - cross) / (1 + hess)."""
    if 1.0 + hess <= 0:
        raise FeasibilityViolation("objective is not convex: 1 + hess <= 0")
    return (target - cross) / (1.0 + hess)


def problem3_terminal(data: LQData) -> dict[str, np.ndarray]:
    q, qb, s = (float(m[0, 0]) for m in (data.terminal_state_cost, data.terminal_mean_cost, data.terminal_mean_scale))
    return {"xx": _m11(q + qb), "xm": _m11(-s * qb), "mm": _m11(s * qb * s), "const": np.asarray(0.0)}


def solve_problem3(
    data: LQData, grid: TimeGrid, bound: float = DEFAULT_BOUND, singular_tol: float = DEFAULT_SINGULAR_TOL
) -> CoefficientTrajectories:
    _check_grid(data, grid)
    if data.dim != 1:
        raise ValueError("the controlled-volatility problem is scalar (d = 1)")
    stack = Stack({"xx": (1, 1), "xm": (1, 1), "mm": (1, 1), "const": ()})

    def rhs(t, flat):
        p = stack.unpack(flat)
        return stack.pack(problem3_rhs(data, t, p["xx"], p["xm"], p["mm"]))

    traj = integrate_backward(rhs, stack.pack(problem3_terminal(data)), grid, bound)
    part = stack.unpack(np.asarray(traj.values))
    control = np.array(
        [volatility_control(data, t, float(part["xx"][k, 0, 0]), float(part["xm"][k, 0, 0])) for k, t in enumerate(grid.times)]
    )
    phi = fundamental_solution(
        lambda t: data.drift(t) + data.mean_drift(t), grid, singular_tol=singular_tol, bound=bound
    )
    return _from_trajectory(
        "p3",
        grid,
        stack,
        traj,
        extra={"vol_control": control, "mean_propagator": phi.values},
        extra_rates={"vol_control": np.gradient(control, grid.dt, edge_order=2), "mean_propagator": phi.rates},
    )


# ---------------------------------------------------------------------------
# Problem 4: partial observation


def filter_covariance_rhs(data: LQData, t: float, cov: np.ndarray, include_common_noise: bool = False) -> np.ndarray:
    """Conditional covariance rate of the state given common noise and observations.

    The common noise is observed, so it does not enter the error covariance;
    ``include_common_noise`` adds common_vol common_vol^T for comparison.
    """
    b = data.drift(t)
    h = data.obs_matrix
    rate = data.vol @ data.vol.T + b @ cov + cov @ b.T - cov @ h.T @ data.obs_precision @ h @ cov
    if include_common_noise:
        rate = rate + data.common_diffusion
    return rate


def solve_filter_covariance(
    data: LQData, grid: TimeGrid, include_common_noise: bool = False, bound: float = DEFAULT_BOUND
) -> Trajectory:
    return integrate_forward(
        lambda t, p: filter_covariance_rhs(data, t, p, include_common_noise), data.init_cov, grid, bound
    )


def problem4_rhs(data: LQData, t: float, cov, xx, xm, mm, ee, xe) -> dict[str, np.ndarray]:
    """Derivatives of (xx, xm, mm, ee, xe, const) given the filter covariance ``cov`` at t."""
    b, bb = data.drift(t), data.mean_drift(t)
    q, qb, s = data.running_state_cost(t), data.running_mean_cost(t), data.running_mean_scale(t)
    h, prec = data.obs_matrix, data.obs_precision
    c0 = data.common_diffusion
    gain = cov @ h.T @ prec
    gain_h = gain @ h
    feedback = xx + xe
    filt = b - feedback - gain_h
    gen = b + bb - xx - xm - xe
    mean_drift = bb - xm
    d_xx = -xx.T @ b - b.T @ xx - (q + qb) - xe @ gain_h - gain_h.T @ xe.T
    d_xm = -xm.T @ gen - xe @ mean_drift - xx.T @ mean_drift - b.T @ xm + qb @ s
    d_mm = -gen.T @ mm - mm.T @ gen - xm.T @ mean_drift - mean_drift.T @ xm - xm.T @ xm - s.T @ qb @ s
    d_ee = -(filt.T @ ee + ee.T @ filt) + (feedback.T @ xe + xe.T @ feedback) - feedback.T @ feedback
    d_xe = -xe @ filt - h.T @ prec @ h @ cov.T @ ee.T + xx.T @ feedback - b.T @ xe
    d_const = (
        -0.5 * np.trace(data.diffusion @ xx)
        - 0.5 * np.trace(c0 @ (mm + ee))
        - np.trace(c0 @ (xm + xe))
        - 0.5 * np.trace(h @ cov @ ee @ cov @ h.T @ prec)
    )
    return {"xx": d_xx, "xm": d_xm, "mm": d_mm, "ee": d_ee, "xe": d_xe, "const": np.asarray(d_const)}


def problem4_terminal(data: LQData) -> dict[str, np.ndarray]:
    base = problem2_terminal(data)
    d = data.dim
    return {
        "xx": base["xx"],
        "xm": base["xm"],
        "mm": base["mm"],
        "ee": np.zeros((d, d)),
        "xe": np.zeros((d, d)),
        "const": np.asarray(0.0),
    }


def solve_problem4(
    data: LQData,
    grid: TimeGrid,
    bound: float = DEFAULT_BOUND,
    singular_tol: float = DEFAULT_SINGULAR_TOL,
    include_common_noise: bool = False,
    check: bool = True,
) -> CoefficientTrajectories:
    """Filter covariance forward, the six coupled coefficients backward as one
    stacked system, then the mean and filter propagators forward."""
    _check_grid(data, grid)
    if check:
        data.check_mean_field_assumptions()
    d = data.dim
    cov = solve_filter_covariance(data, grid, include_common_noise, bound)
    stack = Stack({"xx": (d, d), "xm": (d, d), "mm": (d, d), "ee": (d, d), "xe": (d, d), "const": ()})

    def rhs(t, flat):
        p = stack.unpack(flat)
        return stack.pack(problem4_rhs(data, t, cov(t), p["xx"], p["xm"], p["mm"], p["ee"], p["xe"]))

    traj = integrate_backward(rhs, stack.pack(problem4_terminal(data)), grid, bound)
    part = stack.unpack(np.asarray(traj.values))
    rates = stack.unpack(np.asarray(traj.rates))
    tr = {k: Trajectory(grid, np.array(part[k]), np.array(rates[k])) for k in ("xx", "xm", "xe")}
    h, prec = data.obs_matrix, data.obs_precision

    def mean_gen(t):
        return data.drift(t) + data.mean_drift(t) - tr["xx"](t) - tr["xm"](t) - tr["xe"](t)

    def filter_gen(t):
        return data.drift(t) - tr["xx"](t) - tr["xe"](t) - cov(t) @ h.T @ prec @ h

    phi = fundamental_solution(mean_gen, grid, singular_tol=singular_tol, bound=bound)
    psi = fundamental_solution(filter_gen, grid, singular_tol=singular_tol, bound=bound)
    gain = np.array([cov.values[k] @ h.T @ prec for k in range(grid.steps + 1)])
    extra = {
        "filter_cov": cov.values,
        "mean_propagator": phi.values,
        "filter_propagator": psi.values,
        "filter_gain": gain,
        "mean_generator": np.array([mean_gen(t) for t in grid.times]),
        "filter_generator": np.array([filter_gen(t) for t in grid.times]),
    }
    extra_rates = {"filter_cov": cov.rates, "mean_propagator": phi.rates, "filter_propagator": psi.rates}
    return _from_trajectory("p4", grid, stack, traj, extra=extra, extra_rates=extra_rates)


@dataclass(frozen=True)
class SeparationReport:
    max_symmetry_defect: float  # max |ee + xe^T|
    max_gamma_defect: float  # max |xx - ee - xx_problem2|
    max_mean_filter_coefficient: float  # max |(ee + xe^T)(mean_drift - xm)|
    max_literal_mean_filter_expression: float

    def passed(self, tol: float = 1e-8) -> bool:
        return (
            self.max_symmetry_defect < tol
            and self.max_gamma_defect < tol
            and self.max_mean_filter_coefficient < tol
            and self.max_literal_mean_filter_expression < tol
        )


def separation_report(
    data: LQData, p4: CoefficientTrajectories, p2: CoefficientTrajectories
) -> SeparationReport:
    """Evaluate the partial-observation identities against the full-observation solve."""
    sym = p4["ee"] + np.swapaxes(p4["xe"], -1, -2)
    gamma = p4["xx"] - p4["ee"]
    mu_eta = []
    literal = []
    for k, t in enumerate(p4.grid.times):
        md = data.mean_drift(t) - p4["xm"][k]
        mu_eta.append(np.max(np.abs(sym[k] @ md)))
        ee, xe = p4["ee"][k], p4["xe"][k]
        literal.append(np.max(np.abs(-ee @ md - xe @ md + (ee + xe) @ md)))
    return SeparationReport(
        max_symmetry_defect=float(np.max(np.abs(sym))),
        max_gamma_defect=float(np.max(np.abs(gamma - p2["xx"]))),
        max_mean_filter_coefficient=float(np.max(mu_eta)),
        max_literal_mean_filter_expression=float(np.max(literal)),
    )


def _check_grid(data: LQData, grid: TimeGrid):
    if abs(grid.horizon - data.horizon) > 1e-12 * max(1.0, data.horizon):
        raise ValueError(f"grid horizon {grid.horizon} differs from data horizon {data.horizon}")


def warn_if(condition: bool, message: str):
    if condition:
        warnings.warn(message, PreconditionWarning, stacklevel=3)
