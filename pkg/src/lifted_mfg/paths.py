"""Time grids, piecewise-linear paths and the plateau/concatenation operations.

A path stores its value at every grid point plus, optionally, its left limit
there.  Between grid points it is linear from the right value at ``t_i`` to the
left limit at ``t_{i+1}``, so a jump can only sit on a grid point.  Continuous
paths have identical right values and left limits.
"""

from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import AnticipationError, GridMismatch, HorizonExceeded

# Relative slack when snapping a time to the grid.
_SNAP_TOL = 1e-9


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t_k = k * T / N on [0, T]."""

    horizon: float
    steps: int

    def __post_init__(self):
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        if int(self.steps) != self.steps or self.steps < 1:
            raise ValueError(f"steps must be a positive integer, got {self.steps}")
        object.__setattr__(self, "steps", int(self.steps))
        object.__setattr__(self, "horizon", float(self.horizon))

    @property
    def dt(self) -> float:
        return self.horizon / self.steps

    @cached_property
    def times(self) -> np.ndarray:
        t = np.linspace(0.0, self.horizon, self.steps + 1)
        t.setflags(write=False)
        return t

    def index(self, t: float) -> int:
        """Grid index of ``t``; raises if ``t`` is not a grid point."""
        k = int(round(t / self.dt))
        if k < 0 or k > self.steps or abs(t - k * self.dt) > _SNAP_TOL * max(self.horizon, 1.0):
            raise ValueError(f"time {t} is not a point of {self}")
        return k

    def steps_for(self, epsilon: float) -> int:
        """Number of steps spanned by ``epsilon``; raises unless it is a multiple of dt."""
        m = int(round(epsilon / self.dt))
        if abs(epsilon - m * self.dt) > _SNAP_TOL * max(self.horizon, 1.0):
            raise ValueError(f"epsilon={epsilon} is not a multiple of dt={self.dt}")
        return m

    def refine(self, factor: int = 2) -> "TimeGrid":
        return TimeGrid(self.horizon, self.steps * factor)


def _as_values(values, grid: TimeGrid) -> np.ndarray:
    arr = np.array(values, dtype=float)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] != grid.steps + 1:
        raise ValueError(f"expected {grid.steps + 1} rows of path values, got shape {arr.shape}")
    arr.setflags(write=False)
    return arr


def cadlag_interpolate(grid: TimeGrid, right: np.ndarray, left: np.ndarray, s) -> np.ndarray:
    """Evaluate the piecewise-linear cadlag path at times ``s``."""
    s_arr = np.atleast_1d(np.asarray(s, dtype=float))
    if np.any(s_arr < -_SNAP_TOL) or np.any(s_arr > grid.horizon * (1 + _SNAP_TOL)):
        raise ValueError("evaluation time outside [0, T]")
    pos = np.clip(s_arr / grid.dt, 0.0, grid.steps)
    i = np.floor(pos + _SNAP_TOL).astype(int)
    i = np.minimum(i, grid.steps)
    frac = np.clip(pos - i, 0.0, 1.0)
    frac[i == grid.steps] = 0.0
    nxt = np.minimum(i + 1, grid.steps)
    out = right[i] + frac[:, None] * (left[nxt] - right[i])
    return out[0] if np.ndim(s) == 0 else out


class _GridPathBase:
    """Shared read API for stored and perturbed paths."""

    grid: TimeGrid

    @property
    def right_values(self) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def left_values(self) -> np.ndarray:  # pragma: no cover - abstract
        raise NotImplementedError

    @property
    def dim(self) -> int:
        return self.right_values.shape[1]

    def __call__(self, s):
        return cadlag_interpolate(self.grid, self.right_values, self.left_values, s)

    def history(self, n: int) -> "HistoryView":
        return HistoryView(self, n)


class Path(_GridPathBase):
    """A d-dimensional path sampled on a TimeGrid.

    ``left_values`` defaults to ``values`` (continuous path).  Paths in the
    canonical space start at zero; pass ``pinned=False`` to allow otherwise.
    """

    __slots__ = ("grid", "_values", "_left")

    def __init__(self, grid: TimeGrid, values, left_values=None, pinned: bool = True):
        self.grid = grid
        self._values = _as_values(values, grid)
        self._left = self._values if left_values is None else _as_values(left_values, grid)
        if self._left.shape != self._values.shape:
            raise ValueError("left limits and values must have the same shape")
        if pinned and np.any(self._values[0] != 0.0):
            raise ValueError("path must start at 0 (pass pinned=False to override)")

    @property
    def values(self) -> np.ndarray:
        return self._values

    @property
    def right_values(self) -> np.ndarray:
        return self._values

    @property
    def left_values(self) -> np.ndarray:
        return self._left

    @property
    def is_continuous(self) -> bool:
        return self._left is self._values or bool(np.array_equal(self._left, self._values))

    def to_csv(self, target=None) -> str | None:
        """Write ``t,x1..xd`` rows with 17 significant digits."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x{j + 1}" for j in range(self.dim)])
        for t, row in zip(self.grid.times, self._values):
            w.writerow([_fmt(t)] + [_fmt(v) for v in row])
        text = buf.getvalue()
        if target is None:
            return text
        with open(target, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        return None

    @classmethod
    def from_csv(cls, source, pinned: bool = True) -> "Path":
        if isinstance(source, (str, os.PathLike)) and os.path.exists(source):
            with open(source, encoding="utf-8") as fh:
                text = fh.read()
        else:
            text = str(source)
        rows = list(csv.reader(io.StringIO(text)))
        header, body = rows[0], [r for r in rows[1:] if r]
        if header[0] != "t":
            raise ValueError("path CSV must start with a 't' column")
        data = np.array([[float(x) for x in r] for r in body])
        times = data[:, 0]
        n = len(times) - 1
        grid = TimeGrid(float(times[-1]), n)
        if not np.allclose(times, grid.times, rtol=0, atol=1e-12 * max(1.0, grid.horizon)):
            raise ValueError("path CSV times are not a uniform grid starting at 0")
        return cls(grid, data[:, 1:], pinned=pinned)

    def __repr__(self) -> str:
        return f"Path(T={self.grid.horizon}, N={self.grid.steps}, d={self.dim})"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


class PerturbedPath(_GridPathBase):
    """View of ``base`` with the constant ``y`` on [t, t + epsilon).

    The window starts with a jump at ``t`` and ends with a jump back to the base
    path at ``t + epsilon``; arrays are materialised on first access only.
    """

    def __init__(self, base: _GridPathBase, start: int, width: int, y):
        self.base = base
        self.grid = base.grid
        self.start = int(start)
        self.width = int(width)
        self.y = np.array(y, dtype=float).reshape(base.dim)
        self.y.setflags(write=False)

    @property
    def t(self) -> float:
        return self.start * self.grid.dt

    @property
    def epsilon(self) -> float:
        return self.width * self.grid.dt

    @cached_property
    def right_values(self) -> np.ndarray:
        out = np.array(self.base.right_values)
        out[self.start:self.start + self.width] = self.y
        out.setflags(write=False)
        return out

    @cached_property
    def left_values(self) -> np.ndarray:
        out = np.array(self.base.left_values)
        out[self.start + 1:self.start + self.width + 1] = self.y
        out.setflags(write=False)
        return out

    def __call__(self, s):
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.atleast_2d(self.base(s_arr)).copy()
        lo, hi = self.t, self.t + self.epsilon
        tol = _SNAP_TOL * max(self.grid.horizon, 1.0)
        inside = (s_arr >= lo - tol) & (s_arr < hi - tol)
        out[inside] = self.y
        return out[0] if np.ndim(s) == 0 else out


def insert_plateau(base: _GridPathBase, t: float, y, epsilon: float) -> PerturbedPath:
    """Return ``base + (y - base) * 1_[t, t+epsilon)`` as a view."""
    grid = base.grid
    if epsilon < grid.dt * (1 - _SNAP_TOL):
        raise ValueError(f"epsilon={epsilon} is below the grid resolution dt={grid.dt}")
    k = grid.index(t)
    m = grid.steps_for(epsilon)
    if k + m > grid.steps:
        raise HorizonExceeded(f"plateau [{t}, {t + epsilon}) leaves the horizon T={grid.horizon}")
    return PerturbedPath(base, k, m, y)


def concatenate(history: _GridPathBase, t: float, y, continuation: _GridPathBase) -> Path:
    """History on [0, t), then ``y + continuation(s) - continuation(t)`` on [t, T].

    The result jumps at ``t`` from the history's left limit to ``y``.
    """
    if history.grid != continuation.grid:
        raise GridMismatch("history and continuation live on different grids")
    k = history.grid.index(t)
    y = np.array(y, dtype=float).reshape(history.dim)
    cont = continuation.right_values
    tail = y + cont[k:] - cont[k]
    right = np.concatenate([history.right_values[:k], tail])
    left = np.concatenate([history.left_values[:k + 1], tail[1:]])
    if k == 0:
        left[0] = tail[0]
    return Path(history.grid, right, left, pinned=False)


class HistoryView:
    """Strict history of a path on [0, t_n): the only path access lifted functionals get.

    Grid values are readable at indices below ``n``; the left limit at ``t_n`` is
    readable because the history on [0, t_n) determines it.  Any read at or after
    ``t_n`` raises :class:`AnticipationError`.
    """

    __slots__ = ("path", "n")

    def __init__(self, path: _GridPathBase, n: int):
        if n < 0 or n > path.grid.steps:
            raise ValueError(f"history index {n} outside grid")
        self.path = path
        self.n = int(n)

    @property
    def grid(self) -> TimeGrid:
        return self.path.grid

    @property
    def t(self) -> float:
        return self.n * self.path.grid.dt

    @property
    def dim(self) -> int:
        return self.path.dim

    @property
    def values(self) -> np.ndarray:
        """Right values at t_0 .. t_{n-1}."""
        return self.path.right_values[: self.n]

    @property
    def left_limits(self) -> np.ndarray:
        """Left limits at t_1 .. t_n."""
        return self.path.left_values[1: self.n + 1]

    @property
    def left_limit(self) -> np.ndarray:
        """omega(t-); at t=0 the empty history defaults to the stored initial left value."""
        return self.path.left_values[self.n]

    def __getitem__(self, i: int) -> np.ndarray:
        if not isinstance(i, (int, np.integer)):
            raise TypeError("history supports integer indexing only; use .values for slices")
        if i < 0 or i >= self.n:
            raise AnticipationError(f"read of grid index {i} at or after present index {self.n}")
        return self.path.right_values[i]

    def at(self, s: float) -> np.ndarray:
        if s >= self.t - _SNAP_TOL * self.grid.dt:
            raise AnticipationError(f"read at s={s} >= t={self.t}")
        return self.path(s)

    def integral(self, weights=None) -> np.ndarray:
        """Exact integral over [0, t_n) of ``w(s) omega_s`` for piecewise-linear integrands.

        ``weights`` is None, a length-(N+1) scalar array, or an (N+1, p, d) array
        of matrices applied to the path value; it is sampled at grid points.
        """
        if self.n == 0:
            shape = (self.dim,) if weights is None or np.ndim(weights) == 1 else (np.shape(weights)[1],)
            return np.zeros(shape)
        right = self.values
        left = self.left_limits
        if weights is not None:
            w = np.asarray(weights)
            if w.ndim == 1:
                right = w[: self.n, None] * right
                left = w[1: self.n + 1, None] * left
            else:
                right = np.einsum("kij,kj->ki", w[: self.n], right)
                left = np.einsum("kij,kj->ki", w[1: self.n + 1], left)
        return 0.5 * self.grid.dt * (right.sum(axis=0) + left.sum(axis=0))

    def map_integral(self, fn) -> float:
        """Integral over [0, t_n) of ``fn(omega_s)`` by the trapezoid rule on each cell."""
        if self.n == 0:
            return 0.0
        return 0.5 * self.grid.dt * (float(np.sum(fn(self.values))) + float(np.sum(fn(self.left_limits))))


def cumulative_cadlag_integral(right: np.ndarray, left: np.ndarray, dt: float) -> np.ndarray:
    """Running trapezoid integrals I_k = int_0^{t_k} for cadlag integrand samples.

    ``right[i]`` is the integrand just after t_i, ``left[i]`` just before it; the
    leading axis is time and any trailing axes are carried along.
    """
    right = np.asarray(right, dtype=float)
    left = np.asarray(left, dtype=float)
    cells = 0.5 * dt * (right[:-1] + left[1:])
    out = np.zeros_like(right)
    np.cumsum(cells, axis=0, out=out[1:])
    return out


def _seed_sequence(seed, keys: Sequence[int] = ()) -> np.random.SeedSequence:
    if isinstance(seed, np.random.SeedSequence):
        base_key = tuple(seed.spawn_key)
        return np.random.SeedSequence(seed.entropy, spawn_key=base_key + tuple(int(k) for k in keys))
    return np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))


def rng(seed, *keys: int) -> np.random.Generator:
    """Generator for the stream addressed by ``(seed, *keys)``.

    Keys form a hierarchy (e.g. stream id, particle block), so a given path's
    noise never depends on how many other paths a run draws.
    """
    return np.random.default_rng(_seed_sequence(seed, keys))


def sample_brownian(grid: TimeGrid, d: int, seed, *keys: int) -> Path:
    """Standard d-dimensional Brownian path on ``grid`` from the stream ``(seed, *keys)``."""
    if d < 1:
        raise ValueError("dimension must be positive")
    inc = rng(seed, *keys).standard_normal((grid.steps, d)) * np.sqrt(grid.dt)
    values = np.zeros((grid.steps + 1, d))
    np.cumsum(inc, axis=0, out=values[1:])
    return Path(grid, values)


def sample_smooth_path(grid: TimeGrid, d: int, seed, modes: int = 4, scale: float = 1.0) -> Path:
    """Random smooth path sum_j a_j sin(j pi s / T) + c s; used where finite
    differences must see a differentiable continuation."""
    g = rng(seed)
    s = grid.times / grid.horizon
    amp = g.normal(0.0, scale, size=(modes, d)) / np.arange(1, modes + 1)[:, None]
    slope = g.normal(0.0, scale, size=d)
    values = np.sin(np.pi * np.outer(s, np.arange(1, modes + 1))) @ amp + np.outer(s, slope)
    values[0] = 0.0
    return Path(grid, values)


def path_from_function(grid: TimeGrid, fn, d: int = 1) -> Path:
    """Sample ``fn(t)`` on the grid (fn must vanish at 0)."""
    vals = np.array([np.atleast_1d(fn(t)) for t in grid.times], dtype=float).reshape(-1, d)
    return Path(grid, vals)


def zero_path(grid: TimeGrid, d: int = 1) -> Path:
    return Path(grid, np.zeros((grid.steps + 1, d)))


__all__: Iterable[str] = [
    "TimeGrid",
    "Path",
    "PerturbedPath",
    "HistoryView",
    "insert_plateau",
    "concatenate",
    "sample_brownian",
    "sample_smooth_path",
    "path_from_function",
    "zero_path",
    "cumulative_cadlag_integral",
    "cadlag_interpolate",
    "rng",
]
