"""Finite-difference compensator and compensated time derivative of lifted functionals,
plus closed-form oracles for the prototype and heat-equation examples.

A lifted functional is evaluated at a grid time t_n on the strict history of its
path argument(s) together with a separate present value.  The compensator at
(t, omega, y) is

    lim_{eps -> 0} [f(t+eps, omega with plateau y on [t, t+eps), y) - f(t+eps, omega, y)] / eps

and the compensated time derivative replaces the second term by f(t, omega, y).
Both limits are estimated on an epsilon ladder tied to dt and extrapolated with
a Richardson table.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import HorizonExceeded, NonConvergence
from .paths import (
    HistoryView,
    Path,
    PerturbedPath,
    TimeGrid,
    rng,
)

DEFAULT_LADDER = (16, 8, 4, 2, 1)
DEFAULT_TOL = 1e-4

SMOOTH = "smooth"
JUMP_SENSITIVE_UNKNOWN = "jump-sensitive-unknown"


@dataclass(frozen=True)
class LiftedFunctional:
    """Evaluator over strict histories.

    ``evaluator(history, y)`` for arity 1, ``evaluator(history_omega, history_gamma, y, z)``
    for arity 2.  Histories are :class:`HistoryView` objects, so a read at or after
    the present time raises.
    """

    evaluator: Callable
    arity: int = 1
    tag: str = SMOOTH
    name: str = ""

    def __post_init__(self):
        if self.arity not in (1, 2):
            raise ValueError("arity must be 1 or 2")
        if self.tag not in (SMOOTH, JUMP_SENSITIVE_UNKNOWN):
            raise ValueError(f"unknown smoothness tag {self.tag!r}")

    def at_index(self, n: int, omega, y, gamma=None, z=None):
        if self.arity == 1:
            return np.asarray(self.evaluator(HistoryView(omega, n), _vec(y, omega.dim)), dtype=float)
        if gamma is None or z is None:
            raise ValueError("arity-2 functional needs gamma and z")
        return np.asarray(
            self.evaluator(HistoryView(omega, n), HistoryView(gamma, n), _vec(y, omega.dim), _vec(z, gamma.dim)),
            dtype=float,
        )

    def __call__(self, t: float, omega, y, gamma=None, z=None):
        return self.at_index(omega.grid.index(t), omega, y, gamma, z)


def _vec(y, d: int) -> np.ndarray:
    return np.array(y, dtype=float).reshape(d)


@dataclass(frozen=True)
class CompensatorEstimate:
    value: np.ndarray | float
    epsilons: tuple[float, ...]
    table: tuple[tuple[np.ndarray, ...], ...]
    converged: bool
    residual: float
    quotients: tuple[np.ndarray, ...] = field(default=())

    def __float__(self) -> float:
        return float(np.asarray(self.value).reshape(-1)[0])


def richardson_table(quotients: Sequence[np.ndarray], ratio: float = 2.0) -> list[list[np.ndarray]]:
    """Neville-style table for Q(eps) = L + c1 eps + c2 eps^2 + ..., eps shrinking by ``ratio``."""
    table: list[list[np.ndarray]] = []
    for j, q in enumerate(quotients):
        row = [np.asarray(q, dtype=float)]
        for i in range(1, j + 1):
            fac = ratio**i - 1.0
            row.append(row[i - 1] + (row[i - 1] - table[j - 1][i - 1]) / fac)
        table.append(row)
    return table


def _extrapolate(quotients, epsilons, tol, what: str, raise_on_failure: bool) -> CompensatorEstimate:
    table = richardson_table(quotients)
    last = table[-1]
    value = last[-1]
    if len(last) >= 2:
        residual = float(np.max(np.abs(last[-1] - last[-2])))
    else:
        residual = math.inf
    converged = bool(np.all(np.isfinite(value))) and residual < tol
    est = CompensatorEstimate(
        value=value if np.ndim(value) else float(value),
        epsilons=tuple(epsilons),
        table=tuple(tuple(r) for r in table),
        converged=converged,
        residual=residual,
        quotients=tuple(np.asarray(q) for q in quotients),
    )
    if not converged and raise_on_failure:
        raise NonConvergence(
            f"{what}: last Richardson entries differ by {residual:.3e} >= tol {tol:.1e}", estimate=est
        )
    return est


def _ladder(grid: TimeGrid, n: int, ladder: Sequence[int]) -> list[int]:
    usable = [m for m in ladder if n + m <= grid.steps]
    if not usable:
        raise HorizonExceeded(f"no epsilon in the ladder fits between t={n * grid.dt} and T={grid.horizon}")
    if len(usable) < 2:
        raise HorizonExceeded("fewer than two ladder levels fit before the horizon")
    return usable


def _plateau(path, n, m, value):
    return PerturbedPath(path, n, m, value)


def _quotients(f: LiftedFunctional, n, omega, y, gamma, z, ladder, mode: str):
    grid = omega.grid
    steps = _ladder(grid, n, ladder)
    y = _vec(y, omega.dim)
    if f.arity == 2:
        z = _vec(z, gamma.dim)
    base_now = None
    if mode == "compensated":
        base_now = f.at_index(n, omega, y, gamma, z)
    quotients, eps = [], []
    for m in steps:
        e = m * grid.dt
        pert_o = _plateau(omega, n, m, y)
        pert_g = _plateau(gamma, n, m, z) if f.arity == 2 else None
        if mode == "time":
            upper = f.at_index(n + m, omega, y, gamma, z)
            lower = f.at_index(n, omega, y, gamma, z)
        else:
            upper = f.at_index(n + m, pert_o, y, pert_g, z)
            lower = base_now if mode == "compensated" else f.at_index(n + m, omega, y, gamma, z)
        quotients.append((upper - lower) / e)
        eps.append(e)
    return quotients, eps


def compensator_fd(
    f: LiftedFunctional,
    t: float,
    omega: Path,
    y,
    tol: float = DEFAULT_TOL,
    *,
    gamma: Path | None = None,
    z=None,
    ladder: Sequence[int] = DEFAULT_LADDER,
    raise_on_failure: bool = True,
) -> CompensatorEstimate:
    """Richardson-extrapolated compensator of ``f`` at (t, omega, y)."""
    n = omega.grid.index(t)
    q, eps = _quotients(f, n, omega, y, gamma, z, ladder, "compensator")
    return _extrapolate(q, eps, tol, "compensator", raise_on_failure)


def compensated_time_derivative_fd(
    f: LiftedFunctional,
    t: float,
    omega: Path,
    y,
    tol: float = DEFAULT_TOL,
    *,
    gamma: Path | None = None,
    z=None,
    ladder: Sequence[int] = DEFAULT_LADDER,
    raise_on_failure: bool = True,
) -> CompensatorEstimate:
    """Richardson-extrapolated compensated time derivative at (t, omega, y[, gamma, z])."""
    n = omega.grid.index(t)
    q, eps = _quotients(f, n, omega, y, gamma, z, ladder, "compensated")
    return _extrapolate(q, eps, tol, "compensated time derivative", raise_on_failure)


def time_derivative_fd(
    f: LiftedFunctional,
    t: float,
    omega: Path,
    y,
    tol: float = DEFAULT_TOL,
    *,
    gamma: Path | None = None,
    z=None,
    ladder: Sequence[int] = DEFAULT_LADDER,
    raise_on_failure: bool = True,
) -> CompensatorEstimate:
    """Horizontal derivative: the path keeps running, the present value stays ``y``."""
    n = omega.grid.index(t)
    q, eps = _quotients(f, n, omega, y, gamma, z, ladder, "time")
    return _extrapolate(q, eps, tol, "time derivative", raise_on_failure)


def empirical_order(errors: Sequence[float]) -> float:
    """Smallest log2 ratio of successive errors on a halving ladder."""
    e = np.asarray(errors, dtype=float)
    return float(np.min(np.log2(e[:-1] / e[1:])))


# ---------------------------------------------------------------------------
# Prototype oracle


def prototype_compensator_analytic(h, g, s: float, t: float, omega, y) -> float:
    """(s - t)[h(y) - h(omega_t)] + g(y) - g(omega_t)."""
    if not (0.0 <= t <= s):
        raise ValueError("need 0 <= t <= s")
    w_t = omega(t) if callable(omega) else np.asarray(omega)
    w_t = float(np.asarray(w_t).reshape(-1)[0])
    y = float(np.asarray(y).reshape(-1)[0])
    return (s - t) * (h(y) - h(w_t)) + g(y) - g(w_t)


def prototype_functional(h, g, s: float) -> LiftedFunctional:
    """Lifted form of G(s, .) = int_0^s [int_0^r h(w_u) du + g(w_r)] dr at time t <= s.

    The path is the history on [0, t) continued by the constant present value,
    so G(s, .) is read off the concatenation with a frozen continuation.
    """

    def ev(hist: HistoryView, y):
        grid = hist.grid
        ks = grid.index(s)
        n = hist.n
        if n > ks:
            raise ValueError("prototype functional needs t <= s")
        dt = grid.dt
        yv = float(y[0])
        hr = np.asarray(h(hist.values[:, 0]), dtype=float)
        hl = np.asarray(h(hist.left_limits[:, 0]), dtype=float)
        gr = np.asarray(g(hist.values[:, 0]), dtype=float)
        gl = np.asarray(g(hist.left_limits[:, 0]), dtype=float)
        # Inner running integral H(r) = int_0^r h, at grid points up to t (left limit side).
        inner = np.zeros(n + 1)
        if n:
            np.cumsum(0.5 * dt * (hr + hl), out=inner[1:])
        # Integrand of the outer integral on [0, t): H(r) + g(w_r), cadlag trapezoid.
        outer_hist = 0.5 * dt * (np.sum(inner[:-1] + gr) + np.sum(inner[1:] + gl)) if n else 0.0
        # On [t, s] the path is frozen at y: H(r) = H(t) + (r - t) h(y).
        span = s - n * dt
        outer_future = span * (inner[-1] + g(yv)) + 0.5 * span**2 * h(yv)
        return np.array([outer_hist + outer_future])

    return LiftedFunctional(ev, name=f"prototype(s={s})")


# ---------------------------------------------------------------------------
# Heat-equation examples


RUNNING_INTEGRAL = "running_integral"
RUNNING_MAX = "running_max"


@dataclass(frozen=True)
class SmoothedRunningMax:
    """Terminal data G_N(w) = N^-1 log int_0^T exp(N |w_s|) ds."""

    sharpness: float

    def __post_init__(self):
        if self.sharpness <= 0:
            raise ValueError("sharpness must be positive")


@dataclass(frozen=True)
class HeatEstimate:
    value: float
    stderr: float
    samples: int


def running_integral_functional(horizon: float) -> LiftedFunctional:
    """u(t, w, y) = int_0^t w_s ds + (T - t) y, the lifted heat solution for G = int_0^T w."""

    def ev(hist: HistoryView, y):
        return hist.integral() + (horizon - hist.t) * y

    return LiftedFunctional(ev, name="running-integral heat solution")


def history_integral_functional() -> LiftedFunctional:
    """f(t, w) = int_0^t w_s ds (no dependence on the present value)."""
    return LiftedFunctional(lambda hist, y: hist.integral(), name="history integral")


def running_max_functional() -> LiftedFunctional:
    """max(sup_{s<t} |w_s|, |y|): the raw running maximum with a frozen continuation."""

    def ev(hist: HistoryView, y):
        m = float(np.max(np.abs(y)))
        if hist.n:
            m = max(m, float(np.max(np.abs(hist.values))), float(np.max(np.abs(hist.left_limits))))
        return np.array([m])

    return LiftedFunctional(ev, tag=JUMP_SENSITIVE_UNKNOWN, name="raw running max")


def smoothed_running_max_functional(sharpness: float, horizon: float) -> LiftedFunctional:
    """N^-1 log(int_0^t e^{N|w|} + (T - t) e^{N|y|}): the smoothed analogue with a frozen continuation."""
    N = float(sharpness)

    def ev(hist: HistoryView, y):
        ay = float(np.max(np.abs(y)))
        parts_r = np.abs(hist.values[:, 0]) if hist.n else np.zeros(0)
        parts_l = np.abs(hist.left_limits[:, 0]) if hist.n else np.zeros(0)
        top = max([ay] + ([parts_r.max(), parts_l.max()] if hist.n else []))
        hist_int = 0.5 * hist.grid.dt * (np.sum(np.exp(N * (parts_r - top))) + np.sum(np.exp(N * (parts_l - top))))
        total = hist_int + (horizon - hist.t) * math.exp(N * (ay - top))
        return np.array([top + math.log(total) / N])

    return LiftedFunctional(ev, name=f"smoothed running max N={N}")


def heat_lifted_solution(G, t: float, omega: Path, y, *, samples: int = 20_000, seed=0):
    """Lifted solution E[G(W^{t, omega, y})] of the compensated heat equation.

    ``G`` is :data:`RUNNING_INTEGRAL` (closed form, returns a float) or a
    :class:`SmoothedRunningMax` (Monte Carlo, returns :class:`HeatEstimate`).
    The raw running maximum is jump-sensitive and is refused.
    """
    grid = omega.grid
    n = grid.index(t)
    y = _vec(y, omega.dim)
    if G == RUNNING_INTEGRAL:
        hist = HistoryView(omega, n)
        value = hist.integral() + (grid.horizon - t) * y
        return float(value[0]) if omega.dim == 1 else value
    if G == RUNNING_MAX:
        raise NonConvergence(
            "raw running-max terminal data is jump-sensitive: its compensator does not exist; "
            "use SmoothedRunningMax(N)"
        )
    if not isinstance(G, SmoothedRunningMax):
        raise ValueError(f"unsupported terminal data {G!r}")
    vals = smoothed_max_samples([G.sharpness], n, omega, y, samples, seed)[0]
    return HeatEstimate(float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(samples)), samples)


def smoothed_max_samples(sharpness: Sequence[float], n: int, omega: Path, y, samples: int, seed) -> np.ndarray:
    """Per-sample G_N(W^{t,omega,y}) for each N, sharing the continuation noise (common random numbers).

    Also returns, as the last row, the per-sample discrete running maximum of |W|.
    """
    grid = omega.grid
    y = _vec(y, omega.dim)
    if omega.dim != 1:
        raise ValueError("smoothed running max is implemented for d=1")
    steps_left = grid.steps - n
    g = rng(seed, 0)
    inc = g.standard_normal((samples, steps_left)) * math.sqrt(grid.dt)
    cont = np.concatenate([np.zeros((samples, 1)), np.cumsum(inc, axis=1)], axis=1) + y[0]
    hr = np.abs(omega.right_values[:n, 0])
    hl = np.abs(omega.left_values[1:n + 1, 0])
    ac = np.abs(cont)
    top = np.maximum(ac.max(axis=1), max(hr.max(initial=0.0), hl.max(initial=0.0)))
    out = []
    for N in sharpness:
        hist_part = 0.5 * grid.dt * (np.sum(np.exp(N * (hr[None, :] - top[:, None])), axis=1)
                                     + np.sum(np.exp(N * (hl[None, :] - top[:, None])), axis=1))
        e = np.exp(N * (ac - top[:, None]))
        fut = 0.5 * grid.dt * (e[:, :-1] + e[:, 1:]).sum(axis=1)
        out.append(top + np.log(hist_part + fut) / N)
    out.append(top)
    return np.array(out)


def heat_residual_fd(
    f: LiftedFunctional, t: float, omega: Path, y, *, tol: float = DEFAULT_TOL, y_step: float = 1e-2
) -> float:
    """-(compensated time derivative) - 1/2 d_yy u for a scalar lifted functional, by finite differences."""
    rate = compensated_time_derivative_fd(f, t, omega, y, tol)
    y0 = float(np.asarray(y).reshape(-1)[0])
    up = float(f(t, omega, [y0 + y_step])[0])
    mid = float(f(t, omega, [y0])[0])
    dn = float(f(t, omega, [y0 - y_step])[0])
    d_yy = (up - 2 * mid + dn) / y_step**2
    return float(-np.asarray(rate.value).reshape(-1)[0] - 0.5 * d_yy)


__all__ = [
    "LiftedFunctional",
    "CompensatorEstimate",
    "compensator_fd",
    "compensated_time_derivative_fd",
    "time_derivative_fd",
    "richardson_table",
    "prototype_compensator_analytic",
    "prototype_functional",
    "heat_lifted_solution",
    "SmoothedRunningMax",
    "HeatEstimate",
    "RUNNING_INTEGRAL",
    "RUNNING_MAX",
    "running_integral_functional",
    "history_integral_functional",
    "running_max_functional",
    "smoothed_running_max_functional",
    "smoothed_max_samples",
    "heat_residual_fd",
    "empirical_order",
]
