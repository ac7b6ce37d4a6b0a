"""Fixed-step classical RK4 on the simulation grid, forwards or backwards."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from ..errors import Blowup, NearSingular
from ..paths import TimeGrid

DEFAULT_BOUND = 1e12
DEFAULT_SINGULAR_TOL = 1e-12

Rhs = Callable[[float, np.ndarray], np.ndarray]


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Solution samples on the grid with their time derivatives.

    Calling it at a grid point returns the sample; at a half-step point it
    returns the cubic Hermite interpolant, which keeps fourth-order accuracy
    when another RK4 solve needs this trajectory at stage times.
    """

    grid: TimeGrid
    values: np.ndarray
    rates: np.ndarray

    def __post_init__(self):
        self.values.setflags(write=False)
        self.rates.setflags(write=False)

    def __call__(self, t: float) -> np.ndarray:
        dt = self.grid.dt
        pos = 2.0 * t / dt
        j = int(round(pos))
        if abs(pos - j) > 1e-6 or j < 0 or j > 2 * self.grid.steps:
            raise ValueError(f"t={t} is neither a grid point nor a half-step point")
        k, odd = divmod(j, 2)
        if not odd:
            return self.values[k]
        y0, y1 = self.values[k], self.values[k + 1]
        d0, d1 = self.rates[k], self.rates[k + 1]
        return 0.5 * (y0 + y1) + 0.125 * dt * (d0 - d1)

    def __getitem__(self, k):
        return self.values[k]


def _check_bound(y: np.ndarray, bound: float, t: float):
    if not np.all(np.isfinite(y)) or np.max(np.abs(y)) > bound:
        raise Blowup(f"trajectory exceeded {bound:.1e} near t={t:.6g}", time=t)


def rk4_step(rhs: Rhs, t: float, y: np.ndarray, h: float) -> tuple[np.ndarray, np.ndarray]:
    """One RK4 step of size ``h`` (negative for backward); returns (new state, rhs at start)."""
    k1 = rhs(t, y)
    k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1)
    k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2)
    k4 = rhs(t + h, y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4), k1


def _integrate(rhs: Rhs, start: np.ndarray, grid: TimeGrid, backward: bool, bound: float) -> Trajectory:
    y = np.array(start, dtype=float)
    n = grid.steps
    times = grid.times
    values = np.empty((n + 1,) + y.shape)
    rates = np.empty_like(values)
    order = range(n, 0, -1) if backward else range(0, n)
    h = -grid.dt if backward else grid.dt
    k = n if backward else 0
    values[k] = y
    for k in order:
        t = times[k]
        y, rates[k] = rk4_step(rhs, t, y, h)
        nxt = k - 1 if backward else k + 1
        _check_bound(y, bound, times[nxt])
        values[nxt] = y
    last = 0 if backward else n
    rates[last] = rhs(times[last], values[last])
    return Trajectory(grid, values, rates)


def integrate_backward(rhs: Rhs, terminal, grid: TimeGrid, bound: float = DEFAULT_BOUND) -> Trajectory:
    """Solve Y' = rhs(t, Y), Y(T) = terminal, with RK4 from T down to 0.

    Raises :class:`Blowup` as soon as an entry leaves [-bound, bound].
    """
    _check_bound(np.asarray(terminal, dtype=float), bound, grid.horizon)
    return _integrate(rhs, terminal, grid, True, bound)


def integrate_forward(rhs: Rhs, initial, grid: TimeGrid, bound: float = DEFAULT_BOUND) -> Trajectory:
    """Solve Y' = rhs(t, Y), Y(0) = initial, with RK4 from 0 up to T."""
    _check_bound(np.asarray(initial, dtype=float), bound, 0.0)
    return _integrate(rhs, initial, grid, False, bound)


def fundamental_solution(
    generator: Callable[[float], np.ndarray],
    grid: TimeGrid,
    direction: str = "forward",
    singular_tol: float = DEFAULT_SINGULAR_TOL,
    bound: float = DEFAULT_BOUND,
) -> Trajectory:
    """Phi' = A(t) Phi, Phi(0) = I, with |det Phi| monitored at every grid point."""
    if direction != "forward":
        raise ValueError("only forward fundamental solutions are supported")
    d = np.asarray(generator(0.0)).shape[0]
    traj = integrate_forward(lambda t, m: generator(t) @ m, np.eye(d), grid, bound)
    dets = np.abs(np.linalg.det(traj.values))
    bad = np.nonzero(dets < singular_tol)[0]
    if bad.size:
        raise NearSingular(f"|det| of fundamental solution fell below {singular_tol:g} at t={grid.times[bad[0]]:.6g}")
    return traj


class Stack:
    """Packs named arrays into one flat state vector for a coupled RK4 solve."""

    def __init__(self, shapes: dict[str, tuple[int, ...]]):
        self.shapes = dict(shapes)
        self.sizes = {k: int(np.prod(s)) if s else 1 for k, s in self.shapes.items()}
        offs, o = {}, 0
        for k in self.shapes:
            offs[k] = o
            o += self.sizes[k]
        self.offsets = offs
        self.size = o

    def pack(self, parts: dict[str, np.ndarray]) -> np.ndarray:
        out = np.empty(self.size)
        for k in self.shapes:
            out[self.offsets[k]:self.offsets[k] + self.sizes[k]] = np.asarray(parts[k], dtype=float).reshape(-1)
        return out

    def unpack(self, flat: np.ndarray) -> dict[str, np.ndarray]:
        return {
            k: flat[..., self.offsets[k]:self.offsets[k] + self.sizes[k]].reshape(flat.shape[:-1] + self.shapes[k])
            for k in self.shapes
        }
