"""Lifted value functions and feedback controls of the four model problems.

Every value functional is a quadratic form in the state x and the lifted mean
flows, with coefficients read from solved trajectories at grid times.  Gradients
are exact derivatives of that quadratic form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np

from .compensator import LiftedFunctional
from .meanflow import MeanFlowFunctional
from .paths import HistoryView, TimeGrid, zero_path
from .riccati import CoefficientTrajectories, LQData


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _vec(v, d: int) -> np.ndarray:
    return np.asarray(v, dtype=float).reshape(d)


# ---------------------------------------------------------------------------
# Problem 1


@dataclass(frozen=True, eq=False)
class Problem1Value:
    """Quadratic ansatz in (x, y, I) with I the history integral of omega."""

    traj: CoefficientTrajectories
    problem: str = field(default="p1", init=False)

    @property
    def grid(self) -> TimeGrid:
        return self.traj.grid

    def _coeffs(self, n: int):
        return {k: float(np.asarray(self.traj[k][n]).reshape(())) for k in self.traj.names}

    def history_integral(self, n: int, omega) -> float:
        return float(HistoryView(omega, n).integral()[0])

    def value_at(self, n: int, x, omega, y) -> float:
        c = self._coeffs(n)
        x, y = float(np.reshape(x, ())), float(np.reshape(y, ()))
        i = self.history_integral(n, omega)
        return (
            c["xx"] * x * x
            + c["yy"] * y * y
            + 2.0 * c["xy"] * x * y
            + c["const"]
            + c["ii"] * i * i
            + 2.0 * c["xi"] * x * i
            + 2.0 * c["yi"] * y * i
        )

    def value(self, t: float, x, omega, y) -> float:
        return self.value_at(self.grid.index(t), x, omega, y)

    def gradients(self, t: float, x, omega, y) -> dict[str, float]:
        """First and second derivatives in x and y."""
        n = self.grid.index(t)
        c = self._coeffs(n)
        x, y = float(np.reshape(x, ())), float(np.reshape(y, ()))
        i = self.history_integral(n, omega)
        return {
            "x": 2.0 * (c["xx"] * x + c["xy"] * y + c["xi"] * i),
            "y": 2.0 * (c["yy"] * y + c["xy"] * x + c["yi"] * i),
            "xx": 2.0 * c["xx"],
            "yy": 2.0 * c["yy"],
            "xy": 2.0 * c["xy"],
        }

    def compensated_rate(self, t: float, x, omega, y) -> float:
        """Analytic compensated time derivative: coefficient rates plus d/dt I = y."""
        n = self.grid.index(t)
        r = {k: float(np.asarray(self.traj.rates[k][n]).reshape(())) for k in self.traj.names}
        c = self._coeffs(n)
        x, y = float(np.reshape(x, ())), float(np.reshape(y, ()))
        i = self.history_integral(n, omega)
        coeff_part = (
            r["xx"] * x * x
            + r["yy"] * y * y
            + 2.0 * r["xy"] * x * y
            + r["const"]
            + r["ii"] * i * i
            + 2.0 * r["xi"] * x * i
            + 2.0 * r["yi"] * y * i
        )
        return coeff_part + y * (2.0 * c["ii"] * i + 2.0 * c["xi"] * x + 2.0 * c["yi"] * y)

    def lifted(self, x) -> LiftedFunctional:
        return LiftedFunctional(lambda h, y: self.value_at(h.n, x, h.path, y), name="p1-value")

    def feedback(self, t: float, omega, y) -> float:
        return feedback_problem1(t, omega, y, self.grid.horizon)


def value_problem1(traj: CoefficientTrajectories, t: float, x, omega, y) -> float:
    return Problem1Value(traj).value(t, x, omega, y)


def feedback_problem1(t: float, omega, y, horizon: float | None = None) -> float:
    """-(T - t) y - int_0^t omega_s ds."""
    grid = omega.grid
    T = grid.horizon if horizon is None else horizon
    n = grid.index(t)
    y = float(np.reshape(y, ()))
    return -(T - t) * y - float(HistoryView(omega, n).integral()[0])


# ---------------------------------------------------------------------------
# Problems 2 and 3: quadratic in (x, mean)


@dataclass(frozen=True, eq=False)
class MeanFieldValue:
    """0.5 (x xx x + m mm m + 2 x xm m) + const with m the lifted mean flow."""

    traj: CoefficientTrajectories
    data: LQData
    mean: MeanFlowFunctional

    @property
    def problem(self) -> str:
        return self.traj.problem

    @property
    def grid(self) -> TimeGrid:
        return self.traj.grid

    def quadratic(self, n: int, x: np.ndarray, m: np.ndarray) -> float:
        tr = self.traj
        return float(
            0.5 * (x @ tr["xx"][n] @ x + m @ tr["mm"][n] @ m + 2.0 * x @ tr["xm"][n] @ m) + tr["const"][n]
        )

    def value_at(self, n: int, x, omega, y) -> float:
        x = _vec(x, self.data.dim)
        return self.quadratic(n, x, self.mean.at_index(n, omega, y))

    def value(self, t: float, x, omega, y) -> float:
        return self.value_at(self.grid.index(t), x, omega, y)

    def gradients(self, t: float, x, omega, y) -> dict[str, np.ndarray]:
        n = self.grid.index(t)
        tr = self.traj
        x = _vec(x, self.data.dim)
        m = self.mean.at_index(n, omega, y)
        loading = self.mean.y_loading[n]
        d_mean = _sym(tr["mm"][n]) @ m + tr["xm"][n].T @ x
        return {
            "x": _sym(tr["xx"][n]) @ x + tr["xm"][n] @ m,
            "y": loading.T @ d_mean,
            "xx": _sym(tr["xx"][n]),
            "yy": loading.T @ _sym(tr["mm"][n]) @ loading,
            "xy": tr["xm"][n] @ loading,
            "mean": m,
        }

    def compensated_rate(self, t: float, x, omega, y) -> float:
        n = self.grid.index(t)
        tr = self.traj
        x = _vec(x, self.data.dim)
        m = self.mean.at_index(n, omega, y)
        dm = self.mean.generator[n] @ m
        r = tr.rates
        coeff = 0.5 * (x @ r["xx"][n] @ x + m @ r["mm"][n] @ m + 2.0 * x @ r["xm"][n] @ m) + float(r["const"][n])
        return float(coeff + (_sym(tr["mm"][n]) @ m + tr["xm"][n].T @ x) @ dm)

    def lifted(self, x) -> LiftedFunctional:
        return LiftedFunctional(lambda h, y: self.value_at(h.n, x, h.path, y), name=f"{self.problem}-value")

    def expected_initial_value(self) -> float:
        """Value at t=0 with y=0, averaged over x0 drawn from the initial law."""
        m0 = self.data.init_mean
        mean = self.mean.at_index(0, zero_path(self.grid, self.data.dim), np.zeros(self.data.dim))
        return self.quadratic(0, m0, mean) + 0.5 * float(np.trace(self.traj["xx"][0] @ self.data.init_cov))

    def feedback(self, t: float, x, omega, y) -> np.ndarray:
        """Problem 2: -xx x - xm m.  Problem 3: the deterministic volatility control."""
        n = self.grid.index(t)
        if self.problem == "p3":
            return np.atleast_1d(self.traj["vol_control"][n])
        x = _vec(x, self.data.dim)
        return -self.traj["xx"][n] @ x - self.traj["xm"][n] @ self.mean.at_index(n, omega, y)


def value_problem2(traj, meanflow: MeanFlowFunctional, t: float, x, omega, y) -> float:
    return MeanFieldValue(traj, meanflow.data, meanflow).value(t, x, omega, y)


def feedback_problem2(traj, meanflow: MeanFlowFunctional, t: float, x, omega, y) -> np.ndarray:
    return MeanFieldValue(traj, meanflow.data, meanflow).feedback(t, x, omega, y)


# ---------------------------------------------------------------------------
# Problem 4: partial observation


@dataclass(frozen=True, eq=False)
class PartialObservationValue:
    """Quadratic in (x, m, e) with m the common-noise mean and e the filter."""

    traj: CoefficientTrajectories
    data: LQData
    filter: MeanFlowFunctional
    full_information: CoefficientTrajectories | None = None
    problem: str = field(default="p4", init=False)

    def __post_init__(self):
        object.__setattr__(self, "mean", MeanFlowFunctional("problem4-mu", self.traj, self.data))

    @property
    def grid(self) -> TimeGrid:
        return self.traj.grid

    def flows(self, n: int, omega, gamma, y, z):
        return self.mean.at_index(n, omega, y), self.filter.at_index(n, omega, y, gamma, z)

    def quadratic(self, n: int, x, m, e) -> float:
        tr = self.traj
        return float(
            0.5 * (x @ tr["xx"][n] @ x + m @ tr["mm"][n] @ m + e @ tr["ee"][n] @ e)
            + x @ tr["xm"][n] @ m
            + x @ tr["xe"][n] @ e
            + tr["const"][n]
        )

    def value_at(self, n: int, x, omega, gamma, y, z) -> float:
        x = _vec(x, self.data.dim)
        m, e = self.flows(n, omega, gamma, y, z)
        return self.quadratic(n, x, m, e)

    def value(self, t: float, x, omega, gamma, y, z) -> float:
        return self.value_at(self.grid.index(t), x, omega, gamma, y, z)

    def gradients(self, t: float, x, omega, gamma, y, z) -> dict[str, np.ndarray]:
        n = self.grid.index(t)
        tr = self.traj
        x = _vec(x, self.data.dim)
        m, e = self.flows(n, omega, gamma, y, z)
        common = self.data.common_vol
        gain = self.filter.z_loading[n]
        d_m = _sym(tr["mm"][n]) @ m + tr["xm"][n].T @ x
        d_e = _sym(tr["ee"][n]) @ e + tr["xe"][n].T @ x
        return {
            "x": _sym(tr["xx"][n]) @ x + tr["xm"][n] @ m + tr["xe"][n] @ e,
            "y": common.T @ (d_m + d_e),
            "z": gain.T @ d_e,
            "xx": _sym(tr["xx"][n]),
            "yy": common.T @ (_sym(tr["mm"][n]) + _sym(tr["ee"][n])) @ common,
            "zz": gain.T @ _sym(tr["ee"][n]) @ gain,
            "xy": (tr["xm"][n] + tr["xe"][n]) @ common,
            "mean": m,
            "filter": e,
        }

    def compensated_rate(self, t: float, x, omega, gamma, y, z) -> float:
        n = self.grid.index(t)
        tr = self.traj
        x = _vec(x, self.data.dim)
        m, e = self.flows(n, omega, gamma, y, z)
        dm = self.mean.generator[n] @ m
        de = self.filter.filter_generator[n] @ e + self.filter.coupling[n] @ m
        r = tr.rates
        coeff = (
            0.5 * (x @ r["xx"][n] @ x + m @ r["mm"][n] @ m + e @ r["ee"][n] @ e)
            + x @ r["xm"][n] @ m
            + x @ r["xe"][n] @ e
            + float(r["const"][n])
        )
        d_m = _sym(tr["mm"][n]) @ m + tr["xm"][n].T @ x
        d_e = _sym(tr["ee"][n]) @ e + tr["xe"][n].T @ x
        return float(coeff + d_m @ dm + d_e @ de)

    def lifted(self, x) -> LiftedFunctional:
        return LiftedFunctional(
            lambda ho, hg, y, z: self.value_at(ho.n, x, ho.path, hg.path, y, z), arity=2, name="p4-value"
        )

    def feedback_raw(self, t: float, omega, gamma, y, z) -> np.ndarray:
        """-(xx + xe) e - xm m with the partial-observation coefficients."""
        n = self.grid.index(t)
        m, e = self.flows(n, omega, gamma, y, z)
        return -(self.traj["xx"][n] + self.traj["xe"][n]) @ e - self.traj["xm"][n] @ m

    def feedback_separation(self, t: float, omega, gamma, y, z) -> np.ndarray:
        """Full-information feedback with the state replaced by the filter."""
        if self.full_information is None:
            raise ValueError("separation form needs the full-information trajectories")
        n = self.grid.index(t)
        m, e = self.flows(n, omega, gamma, y, z)
        fi = self.full_information
        return -fi["xx"][n] @ e - fi["xm"][n] @ m

    def feedback(self, t: float, omega, gamma, y, z) -> dict[str, np.ndarray]:
        out = {"raw": self.feedback_raw(t, omega, gamma, y, z)}
        if self.full_information is not None:
            out["separation"] = self.feedback_separation(t, omega, gamma, y, z)
        return out


def value_problem4(traj, meanflow: MeanFlowFunctional, t, x, omega, gamma, y, z) -> float:
    return PartialObservationValue(traj, meanflow.data, meanflow).value(t, x, omega, gamma, y, z)


def feedback_problem4(traj, meanflow: MeanFlowFunctional, t, omega, gamma, y, z, full_information=None):
    return PartialObservationValue(traj, meanflow.data, meanflow, full_information).feedback(t, omega, gamma, y, z)


# ---------------------------------------------------------------------------
# Batch feedback rules for simulation


@dataclass(frozen=True)
class ControlPerturbation:
    """Additive change to a feedback rule.

    ``kind="bump"`` adds ``amplitude * shape(t)``; ``kind="gain"`` adds
    ``-amplitude * shape(t) * x`` (a shift of the state gain).
    """

    kind: str
    amplitude: float
    shape: Callable[[float], float] = field(default=lambda t: 1.0)
    label: str = ""

    def __post_init__(self):
        if self.kind not in ("bump", "gain"):
            raise ValueError("perturbation kind must be 'bump' or 'gain'")

    def offset(self, t: float, x: np.ndarray) -> np.ndarray:
        if self.kind == "bump":
            return self.amplitude * self.shape(t) * np.ones_like(x)
        return -self.amplitude * self.shape(t) * x


@dataclass(frozen=True)
class FeedbackControl:
    """Vectorised feedback ``rule(k, x, context) -> control`` on a grid.

    ``context`` carries whatever the problem needs: ``y`` and ``integral``
    (Problem 1), ``mean`` (Problems 2 and 4) and ``filter`` (Problem 4).
    """

    problem: str
    grid: TimeGrid
    rule: Callable[[int, np.ndarray, Mapping[str, np.ndarray]], np.ndarray]
    perturbation: ControlPerturbation | None = None

    def __call__(self, k: int, x: np.ndarray, **context) -> np.ndarray:
        out = self.rule(k, x, context)
        if self.perturbation is not None:
            out = out + self.perturbation.offset(self.grid.times[k], x)
        return out

    def perturbed(self, perturbation: ControlPerturbation) -> "FeedbackControl":
        return FeedbackControl(self.problem, self.grid, self.rule, perturbation)


def _bmv(mats: np.ndarray, vecs: np.ndarray) -> np.ndarray:
    """Apply a (d, d) matrix to (..., d) vectors."""
    return vecs @ mats.T


def problem1_feedback_rule(grid: TimeGrid) -> FeedbackControl:
    T = grid.horizon
    times = grid.times

    def rule(k, x, ctx):
        return -(T - times[k]) * ctx["y"] - ctx["integral"]

    return FeedbackControl("p1", grid, rule)


def problem2_feedback_rule(traj: CoefficientTrajectories) -> FeedbackControl:
    xx, xm = traj["xx"], traj["xm"]

    def rule(k, x, ctx):
        return -_bmv(xx[k], x) - _bmv(xm[k], ctx["mean"])

    return FeedbackControl("p2", traj.grid, rule)


def problem3_feedback_rule(traj: CoefficientTrajectories) -> FeedbackControl:
    """The deterministic volatility control, identical for every particle."""
    vol = traj["vol_control"]

    def rule(k, x, ctx):
        return np.full_like(x, float(vol[k]))

    return FeedbackControl("p3", traj.grid, rule)


def problem4_feedback_rule(traj: CoefficientTrajectories, form: str = "separation") -> FeedbackControl:
    """``form="separation"`` expects full-information trajectories; ``"raw"`` the partial-observation ones."""
    if form == "separation":
        gain, xm = traj["xx"], traj["xm"]
    elif form == "raw":
        gain, xm = traj["xx"] + traj["xe"], traj["xm"]
    else:
        raise ValueError("form must be 'separation' or 'raw'")

    def rule(k, x, ctx):
        return -_bmv(gain[k], ctx["filter"]) - _bmv(xm[k], ctx["mean"])

    return FeedbackControl("p4", traj.grid, rule)


def zero_feedback(problem: str, grid: TimeGrid) -> FeedbackControl:
    return FeedbackControl(problem, grid, lambda k, x, ctx: np.zeros_like(x))
