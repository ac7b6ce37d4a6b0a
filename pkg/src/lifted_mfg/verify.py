"""Residual checks of the compensated HJB equations, the reconstruction identity
along sampled common-noise paths, and the master-equation cross-check.

Each residual comes in two modes.  ``analytic`` uses the compensated time
derivative implied by the coefficient ODEs; ``fd`` estimates it from the lifted
value functional with :func:`compensator.compensated_time_derivative_fd`.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .compensator import (
    DEFAULT_LADDER,
    DEFAULT_TOL,
    compensated_time_derivative_fd,
    compensator_fd,
    empirical_order,
    heat_residual_fd,
    prototype_compensator_analytic,
    prototype_functional,
    running_integral_functional,
    running_max_functional,
)
from .control import MeanFieldValue, PartialObservationValue, Problem1Value
from .errors import FeasibilityViolation, NonConvergence
from .meanflow import MeanFlowFunctional
from .paths import HistoryView, Path, TimeGrid, rng, sample_brownian, sample_smooth_path
from .riccati import LQData, problem2_rhs


@dataclass(frozen=True)
class ResidualPoint:
    t: float
    x: np.ndarray
    analytic: float
    fd: float | None = None
    estimator_residual: float | None = None


@dataclass(frozen=True)
class ResidualReport:
    problem: str
    points: tuple[ResidualPoint, ...]

    def _col(self, name: str) -> np.ndarray:
        return np.array([abs(getattr(p, name)) for p in self.points if getattr(p, name) is not None])

    def stats(self, mode: str = "analytic") -> dict[str, float]:
        v = self._col(mode)
        if v.size == 0:
            return {"max": math.nan, "mean": math.nan, "q50": math.nan, "q90": math.nan}
        return {
            "max": float(v.max()),
            "mean": float(v.mean()),
            "q50": float(np.quantile(v, 0.5)),
            "q90": float(np.quantile(v, 0.9)),
        }

    def max_abs(self, mode: str = "analytic") -> float:
        return self.stats(mode)["max"]

    def to_csv(self, target=None) -> str | None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "x", "residual_analytic", "residual_fd"])
        for p in self.points:
            x = " ".join(format(float(v), ".17g") for v in np.atleast_1d(p.x))
            fd = "" if p.fd is None else format(p.fd, ".17g")
            w.writerow([format(p.t, ".17g"), x, format(p.analytic, ".17g"), fd])
        text = buf.getvalue()
        if target is None:
            return text
        with open(target, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        return None


def _fd_rate(functional, t, omega, y, tol, gamma=None, z=None, ladder=DEFAULT_LADDER):
    est = compensated_time_derivative_fd(functional, t, omega, y, tol, gamma=gamma, z=z, ladder=ladder)
    return float(np.asarray(est.value).reshape(-1)[0]), est.residual


# ---------------------------------------------------------------------------
# Problem 1


def residual_problem1(
    value: Problem1Value, t: float, x, omega, y, mode: str = "analytic", tol: float = DEFAULT_TOL
) -> ResidualPoint:
    """-dt^y u - u_xx / 2 - u_yy / 2 + u_x^2 / 2."""
    g = value.gradients(t, x, omega, y)
    rest = -0.5 * g["xx"] - 0.5 * g["yy"] + 0.5 * g["x"] ** 2
    analytic = -value.compensated_rate(t, x, omega, y) + rest
    fd = est_res = None
    if mode in ("fd", "both"):
        rate, est_res = _fd_rate(value.lifted(x), t, omega, y, tol)
        fd = -rate + rest
    return ResidualPoint(t, np.atleast_1d(np.asarray(x, dtype=float)), analytic, fd, est_res)


# ---------------------------------------------------------------------------
# Problems 2 and 3


def _problem2_rest(value: MeanFieldValue, t: float, x, omega, y) -> float:
    data = value.data
    x = np.asarray(x, dtype=float).reshape(data.dim)
    g = value.gradients(t, x, omega, y)
    m = g["mean"]
    diffusion = -0.5 * (np.trace(data.diffusion @ g["xx"]) + np.trace(g["yy"])) - np.trace(data.common_vol.T @ g["xy"])
    drift = data.drift(t) @ x + data.mean_drift(t) @ m
    return float(diffusion + 0.5 * g["x"] @ g["x"] - g["x"] @ drift - data.running_cost(t, x, m))


def residual_problem2(
    value: MeanFieldValue, t: float, x, omega, y, mode: str = "analytic", tol: float = DEFAULT_TOL
) -> ResidualPoint:
    """-dt^y u - (tr[a u_xx] + tr u_yy) / 2 - tr[common_vol^T u_xy] + |u_x|^2 / 2 - u_x.(b x + mean_drift m) - f."""
    rest = _problem2_rest(value, t, x, omega, y)
    analytic = -value.compensated_rate(t, x, omega, y) + rest
    fd = est_res = None
    if mode in ("fd", "both"):
        rate, est_res = _fd_rate(value.lifted(x), t, omega, y, tol)
        fd = -rate + rest
    return ResidualPoint(t, np.atleast_1d(np.asarray(x, dtype=float)), analytic, fd, est_res)


def _problem3_rest(value: MeanFieldValue, t: float, x, omega, y) -> float:
    data = value.data
    x = np.asarray(x, dtype=float).reshape(1)
    g = value.gradients(t, x, omega, y)
    hess = float(g["xx"][0, 0])
    cross = float(g["xy"][0, 0])
    target = float(data.target_vol(t)[0])
    if 1.0 + hess <= 0:
        raise FeasibilityViolation(f"1 + u_xx = {1.0 + hess:.3e} <= 0 at t={t:.6g}")
    alpha = (target - cross) / (1.0 + hess)
    m = g["mean"]
    sig2 = float(data.vol[0, 0] ** 2)
    drift = float(data.drift(t)[0, 0] * x[0] + data.mean_drift(t)[0, 0] * m[0])
    ux = float(g["x"][0])
    cost = 0.5 * (alpha - target) ** 2 + data.running_cost(t, x, m)
    return -0.5 * (sig2 + alpha**2) * hess - alpha * cross - 0.5 * float(g["yy"][0, 0]) - ux * drift - cost


def residual_problem3(
    value: MeanFieldValue, t: float, x, omega, y, mode: str = "analytic", tol: float = DEFAULT_TOL
) -> ResidualPoint:
    """Compensated HJB with the volatility optimised pointwise: alpha = (target - u_xy) / (1 + u_xx)."""
    rest = _problem3_rest(value, t, x, omega, y)
    analytic = -value.compensated_rate(t, x, omega, y) + rest
    fd = est_res = None
    if mode in ("fd", "both"):
        rate, est_res = _fd_rate(value.lifted(x), t, omega, y, tol)
        fd = -rate + rest
    return ResidualPoint(t, np.atleast_1d(np.asarray(x, dtype=float)), analytic, fd, est_res)


# ---------------------------------------------------------------------------
# Problem 4


def _problem4_rest(value: PartialObservationValue, t: float, x, omega, gamma, y, z) -> float:
    data = value.data
    n = value.grid.index(t)
    tr = value.traj
    x = np.asarray(x, dtype=float).reshape(data.dim)
    g = value.gradients(t, x, omega, gamma, y, z)
    m, e = g["mean"], g["filter"]
    k_hat = -(tr["xx"][n] + tr["xe"][n]) @ e - tr["xm"][n] @ m
    diffusion = (
        -0.5 * (np.trace(data.diffusion @ g["xx"]) + np.trace(g["yy"]))
        - np.trace(data.common_vol.T @ g["xy"])
        - 0.5 * np.trace(data.obs_cov @ g["zz"])
    )
    obs = -g["z"] @ (data.obs_matrix @ x)
    drift = data.drift(t) @ x + data.mean_drift(t) @ m + k_hat
    return float(diffusion + obs - g["x"] @ drift - data.running_cost(t, x, m) - 0.5 * k_hat @ k_hat)


def residual_problem4(
    value: PartialObservationValue,
    t: float,
    x,
    omega,
    gamma,
    y,
    z,
    mode: str = "analytic",
    tol: float = DEFAULT_TOL,
) -> ResidualPoint:
    """Partial-observation compensated HJB with the filter-based feedback K."""
    rest = _problem4_rest(value, t, x, omega, gamma, y, z)
    analytic = -value.compensated_rate(t, x, omega, gamma, y, z) + rest
    fd = est_res = None
    if mode in ("fd", "both"):
        rate, est_res = _fd_rate(value.lifted(x), t, omega, y, tol, gamma=gamma, z=z)
        fd = -rate + rest
    return ResidualPoint(t, np.atleast_1d(np.asarray(x, dtype=float)), analytic, fd, est_res)


# ---------------------------------------------------------------------------
# Batteries


@dataclass(frozen=True)
class BatteryPoint:
    t: float
    x: np.ndarray
    omega: Path
    y: np.ndarray
    gamma: Path | None = None
    z: np.ndarray | None = None


def random_battery(
    grid: TimeGrid, dim: int, size: int, seed: int, two_paths: bool = False, margin: int = max(DEFAULT_LADDER)
) -> list[BatteryPoint]:
    """Random (t, x, omega, y[, gamma, z]) with t leaving room for the epsilon ladder."""
    g = rng(seed, 0)
    points = []
    last = grid.steps - margin
    if last < 0:
        raise ValueError("grid too coarse for the epsilon ladder")
    for i in range(size):
        n = int(g.integers(0, last + 1))
        t = float(grid.times[n])
        omega = sample_brownian(grid, dim, seed, 1, i)
        gamma = sample_brownian(grid, dim, seed, 2, i) if two_paths else None
        x = g.normal(size=dim)
        y = omega.values[n] + g.normal(size=dim)
        z = gamma.values[n] + g.normal(size=dim) if two_paths else None
        points.append(BatteryPoint(t, x, omega, y, gamma, z))
    return points


def run_battery(value, points: Sequence[BatteryPoint], mode: str = "both", tol: float = DEFAULT_TOL) -> ResidualReport:
    problem = value.problem
    out = []
    for p in points:
        if problem == "p1":
            out.append(residual_problem1(value, p.t, p.x[0], p.omega, p.y[0], mode, tol))
        elif problem == "p2":
            out.append(residual_problem2(value, p.t, p.x, p.omega, p.y, mode, tol))
        elif problem == "p3":
            out.append(residual_problem3(value, p.t, p.x, p.omega, p.y, mode, tol))
        elif problem == "p4":
            out.append(residual_problem4(value, p.t, p.x, p.omega, p.gamma, p.y, p.z, mode, tol))
        else:
            raise ValueError(f"unknown problem {problem!r}")
    return ResidualReport(problem, tuple(out))


# ---------------------------------------------------------------------------
# Optimiser identity (controlled volatility)


def grid_search_minimum(objective: Callable[[np.ndarray], np.ndarray], lo: float, hi: float,
                        points: int = 4001, levels: int = 3) -> float:
    """Nested grid search: each level zooms to two cells around the best point."""
    for _ in range(levels):
        xs = np.linspace(lo, hi, points)
        k = int(np.argmin(objective(xs)))
        step = xs[1] - xs[0]
        lo, hi = xs[max(k - 1, 0)] - step, xs[min(k + 1, points - 1)] + step
    return float(xs[k])


def optimizer_identity_errors(instances: int = 100, seed: int = 0) -> np.ndarray:
    """|closed-form argmin - grid-search argmin| of 0.5 a^2 X + a Q + 0.5 (a - target)^2 on random instances."""
    from .riccati import optimal_volatility

    g = rng(seed, 7)
    errs = []
    for _ in range(instances):
        hess = g.uniform(-0.9, 3.0)
        cross = g.uniform(-2.0, 2.0)
        target = g.uniform(-2.0, 2.0)
        bound = 1.0 + 4.0 / (1.0 + hess)
        found = grid_search_minimum(
            lambda a: 0.5 * a * a * hess + a * cross + 0.5 * (a - target) ** 2, -4.0 * bound, 4.0 * bound
        )
        errs.append(abs(found - optimal_volatility(hess, cross, target)))
    return np.array(errs)


# ---------------------------------------------------------------------------
# Reconstruction along sampled common-noise paths


@dataclass(frozen=True)
class ReconstructionReport:
    paths: int
    steps: int
    dt: float
    mean_step_defect: float
    rms_step_defect: float
    aggregate_mean: float  # mean over paths of sum_k defect_k / sqrt(dt)
    aggregate_stderr: float

    def within(self, n_se: float = 3.0) -> bool:
        return abs(self.aggregate_mean) <= n_se * self.aggregate_stderr


def reconstruction_check_problem2(
    value: MeanFieldValue, xs: Sequence, paths: int = 100, seed: int = 0, omegas: np.ndarray | None = None
) -> ReconstructionReport:
    """Compare value increments along common-noise paths with the stochastic HJB drift and v dW.

    Defect_k = u_{k+1} - u_k - drift_k dt - v_k . (w_{k+1} - w_k) at each fixed x in ``xs``.
    """
    data, traj, mean = value.data, value.traj, value.mean
    grid = traj.grid
    d = data.dim
    dt = grid.dt
    if omegas is None:
        inc = rng(seed, 3).standard_normal((grid.steps, paths, d)) * math.sqrt(dt)
        omegas = np.concatenate([np.zeros((1, paths, d)), np.cumsum(inc, axis=0)])
    m = mean.along(omegas)  # (N+1, P, d)
    times = grid.times
    xx, xm, mm, const = traj["xx"], traj["xm"], traj["mm"], traj["const"]
    b = np.array([data.drift(t) for t in times])
    bb = np.array([data.mean_drift(t) for t in times])
    loading = mean.y_loading
    cv = data.common_vol
    step_defects, aggregates = [], []
    for x in xs:
        x = np.asarray(x, dtype=float).reshape(d)
        xsym = 0.5 * (xx + np.swapaxes(xx, 1, 2))
        msym = 0.5 * (mm + np.swapaxes(mm, 1, 2))
        u = (
            0.5 * (x @ xsym @ x)[:, None]
            + 0.5 * np.einsum("kpi,kij,kpj->kp", m, msym, m)
            + np.einsum("i,kij,kpj->kp", x, xm, m)
            + const[:, None]
        )
        grad_x = np.einsum("kij,j->ki", xsym, x)[:, None, :] + np.einsum("kij,kpj->kpi", xm, m)
        d_mean = np.einsum("kij,kpj->kpi", msym, m) + np.einsum("kji,j->ki", xm, x)[:, None, :]
        v = np.einsum("kji,kpj->kpi", loading, d_mean)
        cross = np.einsum("ji,kjl,kli->k", cv, xm, loading)
        drift_state = np.einsum("kij,j->ki", b, x)[:, None, :] + np.einsum("kij,kpj->kpi", bb, m)
        running = np.array(
            [[data.running_cost(t, x, m[k, p]) for p in range(m.shape[1])] for k, t in enumerate(times)]
        )
        drift = (
            -0.5 * np.einsum("ij,kji->k", data.diffusion, xsym)[:, None]
            - cross[:, None]
            + 0.5 * np.sum(grad_x**2, axis=2)
            - np.sum(grad_x * drift_state, axis=2)
            - running
        )
        dw = np.diff(omegas, axis=0)
        defect = np.diff(u, axis=0) - drift[:-1] * dt - np.sum(v[:-1] * dw, axis=2)
        step_defects.append(defect)
        aggregates.append(defect.sum(axis=0) / math.sqrt(dt))
    sd = np.concatenate([s.reshape(-1) for s in step_defects])
    agg = np.concatenate(aggregates)
    return ReconstructionReport(
        paths=omegas.shape[1],
        steps=grid.steps,
        dt=dt,
        mean_step_defect=float(sd.mean()),
        rms_step_defect=float(np.sqrt(np.mean(sd**2))),
        aggregate_mean=float(agg.mean()),
        aggregate_stderr=float(agg.std(ddof=1) / math.sqrt(agg.size)),
    )


# ---------------------------------------------------------------------------
# Master-equation cross-check


def _master_operator(data: LQData, t: float, xx, xm, mm, x, m) -> float:
    """Time derivative of U(t, x, mean) forced by the LQ master equation.

    The ansatz U = 0.5 (x xx x + m mm m + 2 x xm m) + const depends on the
    measure only through its mean, so measure derivatives reduce to derivatives
    in the mean and are independent of the integration variable.  All
    derivatives are taken numerically from U itself with unit steps, which is
    exact for quadratics.
    """
    d = data.dim

    def U(xv, mv):
        return 0.5 * (xv @ xx @ xv + mv @ mm @ mv + 2.0 * xv @ xm @ mv)

    eye = np.eye(d)

    def grad(fn, at):
        return np.array([0.5 * (fn(at + eye[i]) - fn(at - eye[i])) for i in range(d)])

    def hess(fn, at):
        out = np.empty((d, d))
        for i in range(d):
            for j in range(d):
                out[i, j] = 0.25 * (
                    fn(at + eye[i] + eye[j]) - fn(at + eye[i] - eye[j])
                    - fn(at - eye[i] + eye[j]) + fn(at - eye[i] - eye[j])
                )
        return out

    ux = grad(lambda xv: U(xv, m), x)
    uxx = hess(lambda xv: U(xv, m), x)
    um = grad(lambda mv: U(x, mv), m)
    umm = hess(lambda mv: U(x, mv), m)
    uxm = np.array([grad(lambda mv, i=i: 0.5 * (U(x + eye[i], mv) - U(x - eye[i], mv)), m) for i in range(d)])
    # Player gradient evaluated at the population state v, integrated against the law: linear in v, so at v = mean.
    ux_pop = grad(lambda xv: U(xv, m), m)
    b, bb = data.drift(t), data.mean_drift(t)
    a, c0 = data.diffusion, data.common_diffusion
    lhs_other = (
        -0.5 * np.trace(a @ uxx)
        - (b @ x + bb @ m) @ ux
        + 0.5 * ux @ ux
        - np.trace(c0 @ uxm)
        - 0.5 * np.trace(c0 @ umm)
        - um @ (b @ m + bb @ m - ux_pop)
    )
    return float(lhs_other - data.running_cost(t, x, m))


@dataclass(frozen=True)
class MasterCoefficients:
    xx: np.ndarray
    xm: np.ndarray
    mm: np.ndarray
    const: float


def master_equation_coefficients(data: LQData) -> Callable[[float, np.ndarray, np.ndarray, np.ndarray], MasterCoefficients]:
    """Coefficient rates implied by the master equation, extracted by polarisation.

    Returns ``rates(t, xx, xm, mm)``.  The operator is a quadratic polynomial
    in z = (x, mean); its value at the origin is the constant rate.
    """
    d = data.dim

    def rates(t: float, xx, xm, mm) -> MasterCoefficients:
        def F(zv):
            return _master_operator(data, t, xx, xm, mm, zv[:d], zv[d:])

        size = 2 * d
        eye = np.eye(size)
        f0 = F(np.zeros(size))
        fe = [F(eye[i]) for i in range(size)]
        M = np.empty((size, size))
        for i in range(size):
            M[i, i] = F(2.0 * eye[i]) - 2.0 * fe[i] + f0
            for j in range(i + 1, size):
                M[i, j] = M[j, i] = F(eye[i] + eye[j]) - fe[i] - fe[j] + f0
        return MasterCoefficients(xx=M[:d, :d], xm=M[:d, d:], mm=M[d:, d:], const=f0)

    return rates


def master_equation_discrepancy(data: LQData, traj, points: int = 50, seed: int = 0) -> float:
    """Max |master-equation rates - solver rates| at random grid times along solved trajectories."""
    rates = master_equation_coefficients(data)
    g = rng(seed, 11)
    ks = g.integers(0, traj.grid.steps + 1, size=points)
    worst = 0.0
    for k in ks:
        t = float(traj.grid.times[k])
        xx, xm, mm = traj["xx"][k], traj["xm"][k], traj["mm"][k]
        ref = problem2_rhs(data, t, xx, xm, mm)
        got = rates(t, xx, xm, mm)
        for name in ("xx", "xm", "mm", "const"):
            worst = max(worst, float(np.max(np.abs(np.asarray(getattr(got, name)) - np.asarray(ref[name])))))
    return worst


# ---------------------------------------------------------------------------
# Compensator oracle batteries

PROTOTYPE_CASES: dict[str, tuple[Callable, Callable]] = {
    "h linear, g zero": (lambda v: 0.5 + 2.0 * v, lambda v: 0.0 * v),
    "h zero, g linear": (lambda v: 0.0 * v, lambda v: 1.0 - 1.5 * v),
    "h quadratic, g zero": (lambda v: v * v, lambda v: 0.0 * v),
    "h zero, g quadratic": (lambda v: 0.0 * v, lambda v: 0.5 * v * v - v),
    "h linear, g quadratic": (lambda v: 1.0 - v, lambda v: v * v),
    "h quadratic, g linear": (lambda v: 0.5 * v * v + v, lambda v: 2.0 * v),
}


@dataclass(frozen=True)
class PrototypeCheck:
    case: str
    t: float
    s: float
    y: float
    analytic: float
    extrapolated: float
    quotient_errors: tuple[float, ...]
    order: float
    at_present_value: float

    @property
    def error(self) -> float:
        return abs(self.extrapolated - self.analytic)


def compensator_oracle_battery(
    grid: TimeGrid, points_per_case: int = 8, seed: int = 0, cases: Sequence[str] | None = None,
    tol: float = DEFAULT_TOL,
) -> list[PrototypeCheck]:
    """Finite-difference compensator of the prototype functionals against the closed form.

    Paths are smooth so the raw quotients converge at first order in epsilon;
    the accuracy is measured on the Richardson-extrapolated value and the order
    by :func:`prototype_orders`.  ``at_present_value`` is the extrapolated
    compensator at y = omega_t, which must vanish.
    """
    g = rng(seed, 13)
    names = list(PROTOTYPE_CASES) if cases is None else list(cases)
    margin = max(DEFAULT_LADDER)
    out = []
    for ci, name in enumerate(names):
        h, gfun = PROTOTYPE_CASES[name]
        for i in range(points_per_case):
            omega = sample_smooth_path(grid, 1, int(g.integers(2**31)))
            n = int(g.integers(0, grid.steps - 2 * margin))
            ks = int(g.integers(n + margin, grid.steps + 1))
            t, s = float(grid.times[n]), float(grid.times[ks])
            y = float(omega.values[n, 0] + g.normal())
            f = prototype_functional(h, gfun, s)
            exact = prototype_compensator_analytic(h, gfun, s, t, omega, y)
            est = compensator_fd(f, t, omega, [y], tol, raise_on_failure=False)
            errs = tuple(abs(float(np.reshape(q, -1)[0]) - exact) for q in est.quotients)
            zero = compensator_fd(f, t, omega, omega.values[n], tol, raise_on_failure=False)
            out.append(PrototypeCheck(name, t, s, y, exact, float(est), errs, empirical_order(errs[-2:]), abs(float(zero))))
    return out


def prototype_orders(checks: Sequence[PrototypeCheck]) -> dict[str, float]:
    """Per-case convergence order of the raw quotients on the three finest epsilons.

    Errors are pooled as an RMS over the points of a case: at a single point the
    first-order coefficient can vanish, which leaves the order undefined there.
    """
    by_case: dict[str, list[tuple[float, ...]]] = {}
    for c in checks:
        by_case.setdefault(c.case, []).append(c.quotient_errors)
    orders = {}
    for case, errs in by_case.items():
        rms = np.sqrt(np.mean(np.square(np.array(errs)), axis=0))
        orders[case] = empirical_order(rms[-3:])
    return orders


def heat_battery(grid: TimeGrid, size: int = 20, seed: int = 0, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Finite-difference residuals of the compensated heat equation for the running-integral solution."""
    f = running_integral_functional(grid.horizon)
    return np.array([heat_residual_fd(f, p.t, p.omega, p.y, tol=tol) for p in random_battery(grid, 1, size, seed)])


def running_max_nonconvergence(grid: TimeGrid, seed: int = 0, tol: float = DEFAULT_TOL) -> NonConvergence | None:
    """Compensator of the raw running maximum at y = omega_t on a Brownian path, at a time where
    the running maximum is attained and the path keeps rising.

    A smooth functional would give zero there; here the quotients grow like
    eps^(-1/2).  Returns the raised :class:`NonConvergence` (the expected
    outcome) or None if the ladder converged.
    """
    omega = sample_brownian(grid, 1, seed, 17)
    a = np.abs(omega.values[:, 0])
    top = np.maximum.accumulate(a)
    margin = max(DEFAULT_LADDER)
    candidates = [n for n in range(1, grid.steps - margin) if a[n] >= top[n] and a[n + 1] > a[n]]
    if not candidates:
        raise ValueError("no rising running-maximum time on the sampled path")
    n = candidates[0]
    try:
        compensator_fd(running_max_functional(), float(grid.times[n]), omega, omega.values[n], tol)
    except NonConvergence as err:
        return err
    return None
