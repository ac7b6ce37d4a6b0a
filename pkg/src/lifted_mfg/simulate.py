"""Euler-Maruyama simulation: cost estimation, the finite-population fixed point,
and the partially observed system with its filter.

Noise streams are addressed as ``(seed, stream, block)``.  Particle ``i`` lives
in block ``i // BLOCK`` at position ``i % BLOCK``, and a block's generator
yields its increments time step by time step, so a particle's noise does not
depend on the number of particles in the run.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .control import FeedbackControl, problem4_feedback_rule
from .meanflow import MeanFlowFunctional
from .paths import TimeGrid, rng
from .riccati import CoefficientTrajectories, LQData

BLOCK = 1024
# Samples processed together when every sample carries its own common noise.
CHUNK_BLOCKS = 8

STREAM_COMMON = 0
STREAM_IDIO = 1
STREAM_INIT = 2
STREAM_OBS = 3
STREAM_SHARED = 4


@dataclass(frozen=True)
class SimConfig:
    particles: int
    grid: TimeGrid
    seed: int = 0
    problem: str = "p2"
    data: LQData | None = None

    def __post_init__(self):
        if self.particles < 1:
            raise ValueError("need at least one particle")
        if self.problem not in ("p1", "p2", "p3", "p4"):
            raise ValueError(f"unknown problem {self.problem!r}")
        if self.problem != "p1" and self.data is None:
            raise ValueError(f"{self.problem} simulation needs LQData")
        if self.data is not None and abs(self.data.horizon - self.grid.horizon) > 1e-12:
            raise ValueError("grid horizon differs from the data horizon")


@dataclass
class SimOutput:
    """Summary of one simulation run.

    ``mean_emp``/``mean_lifted`` are per-time conditional means (empty for pure
    cost runs); ``cost``/``stderr`` are the cost estimate and sample std / sqrt(M).
    """

    grid: TimeGrid
    seed: int
    particles: int
    cost: float = math.nan
    stderr: float = math.nan
    mean_emp: np.ndarray | None = None
    mean_lifted: np.ndarray | None = None
    terminal_states: np.ndarray | None = None
    shared_noise: np.ndarray | None = None
    extras: dict = field(default_factory=dict)
    samples: np.ndarray | None = None

    @property
    def abs_dev(self) -> np.ndarray | None:
        if self.mean_emp is None or self.mean_lifted is None:
            return None
        return np.max(np.abs(self.mean_emp - self.mean_lifted), axis=-1)

    @property
    def max_deviation(self) -> float:
        dev = self.abs_dev
        return math.nan if dev is None else float(dev.max())

    def to_csv(self, target=None) -> str | None:
        """``t, mu_emp_*, mu_lifted_*, abs_dev`` rows, then a ``cost,stderr,seed,M,N`` block."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        f = lambda v: format(float(v), ".17g")  # noqa: E731
        if self.mean_emp is not None:
            d = self.mean_emp.shape[1]
            w.writerow(["t"] + [f"mu_emp_{j + 1}" for j in range(d)] + [f"mu_lifted_{j + 1}" for j in range(d)] + ["abs_dev"])
            for k, t in enumerate(self.grid.times):
                w.writerow([f(t)] + [f(v) for v in self.mean_emp[k]] + [f(v) for v in self.mean_lifted[k]] + [f(self.abs_dev[k])])
            w.writerow([])
        w.writerow(["cost", "stderr", "seed", "M", "N"])
        w.writerow([f(self.cost), f(self.stderr), self.seed, self.particles, self.grid.steps])
        for key in sorted(self.extras):
            val = self.extras[key]
            if isinstance(val, (int, float, np.number)) and not isinstance(val, bool):
                w.writerow([key, f(val)])
        text = buf.getvalue()
        if target is None:
            return text
        with open(target, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        return None


# ---------------------------------------------------------------------------
# Noise


def _blocks(particles: int) -> int:
    return -(-particles // BLOCK)


def block_increments(seed: int, stream: int, block: int, steps: int, dim: int, dt: float) -> np.ndarray:
    """All increments of one block, shape (steps, BLOCK, dim)."""
    return rng(seed, stream, block).standard_normal((steps, BLOCK, dim)) * math.sqrt(dt)


def block_normals(seed: int, stream: int, block: int, dim: int) -> np.ndarray:
    return rng(seed, stream, block).standard_normal((BLOCK, dim))


class _StepNoise:
    """Per-step increments for M particles drawn from per-block generators."""

    def __init__(self, seed: int, stream: int, particles: int, dim: int, dt: float):
        self.gens = [rng(seed, stream, b) for b in range(_blocks(particles))]
        self.particles = particles
        self.dim = dim
        self.scale = math.sqrt(dt)

    def draw(self) -> np.ndarray:
        out = np.concatenate([g.standard_normal((BLOCK, self.dim)) for g in self.gens])
        return out[: self.particles] * self.scale


def _initial_states(seed: int, particles: int, data: LQData, at_mean: bool = False) -> np.ndarray:
    d = data.dim
    if at_mean:
        return np.tile(data.init_mean, (particles, 1))
    z = np.concatenate([block_normals(seed, STREAM_INIT, b, d) for b in range(_blocks(particles))])[:particles]
    root = _psd_root(data.init_cov)
    return data.init_mean + z @ root.T


def _psd_root(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(0.5 * (m + m.T))
    return vecs @ np.diag(np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T


def shared_path(grid: TimeGrid, dim: int, seed: int, stream: int = STREAM_SHARED) -> np.ndarray:
    """One common-noise path shared by all particles, shape (N+1, dim)."""
    inc = rng(seed, stream, 0).standard_normal((grid.steps, dim)) * math.sqrt(grid.dt)
    out = np.zeros((grid.steps + 1, dim))
    np.cumsum(inc, axis=0, out=out[1:])
    return out


def _summarise(costs: np.ndarray) -> tuple[float, float]:
    m = costs.size
    se = float(costs.std(ddof=1) / math.sqrt(m)) if m > 1 else math.nan
    return float(costs.mean()), se


# ---------------------------------------------------------------------------
# Problem 1


def simulate_problem1_cost(
    config: SimConfig, feedback: FeedbackControl | Sequence[FeedbackControl], keep_samples: bool = False
) -> SimOutput | list[SimOutput]:
    """Cost of dX = a dt + dW, x0 = 0, with cost int a^2/2 dt + X_T int_0^T W0.

    Every sample has its own W and W0; several feedbacks passed together share
    all noise (common random numbers).
    """
    grid = config.grid
    controls = [feedback] if isinstance(feedback, FeedbackControl) else list(feedback)
    steps, dt, T = grid.steps, grid.dt, grid.horizon
    M = config.particles
    costs = [np.empty(M) for _ in controls]
    nblocks = _blocks(M)
    for start in range(0, nblocks, CHUNK_BLOCKS):
        blocks = range(start, min(start + CHUNK_BLOCKS, nblocks))
        dw0 = np.concatenate([block_increments(config.seed, STREAM_COMMON, b, steps, 1, dt) for b in blocks], axis=1)[..., 0]
        dw = np.concatenate([block_increments(config.seed, STREAM_IDIO, b, steps, 1, dt) for b in blocks], axis=1)[..., 0]
        lo = start * BLOCK
        hi = min(lo + dw.shape[1], M)
        n = hi - lo
        dw0, dw = dw0[:, :n], dw[:, :n]
        w0 = np.zeros((steps + 1, n))
        np.cumsum(dw0, axis=0, out=w0[1:])
        integral = np.zeros_like(w0)
        np.cumsum(0.5 * dt * (w0[:-1] + w0[1:]), axis=0, out=integral[1:])
        for c, ctrl in enumerate(controls):
            x = np.zeros(n)
            running = np.zeros(n)
            for k in range(steps):
                a = ctrl(k, x, y=w0[k], integral=integral[k])
                running += 0.5 * a * a * dt
                x = x + a * dt + dw[k]
            costs[c][lo:hi] = running + x * integral[-1]
    outs = []
    for c, ctrl in enumerate(controls):
        cost, se = _summarise(costs[c])
        outs.append(
            SimOutput(grid, config.seed, M, cost, se, samples=costs[c] if keep_samples else None,
                      extras={"label": ctrl.perturbation.label if ctrl.perturbation else "base"})
        )
    return outs[0] if isinstance(feedback, FeedbackControl) else outs


# ---------------------------------------------------------------------------
# Problems 2 and 3: best-response cost against the equilibrium flow


def _costs_mean_field(config: SimConfig, meanflow: MeanFlowFunctional, controls, at_mean: bool):
    data = config.data
    grid = config.grid
    d = data.dim
    steps, dt = grid.steps, grid.dt
    M = config.particles
    times = grid.times
    b = np.array([data.drift(t) for t in times])
    bb = np.array([data.mean_drift(t) for t in times])
    vol_controlled = config.problem == "p3"
    costs = [np.empty(M) for _ in controls]
    nblocks = _blocks(M)
    init_all = _initial_states(config.seed, M, data, at_mean)
    for start in range(0, nblocks, CHUNK_BLOCKS):
        blocks = range(start, min(start + CHUNK_BLOCKS, nblocks))
        dw0 = np.concatenate([block_increments(config.seed, STREAM_COMMON, blk, steps, d, dt) for blk in blocks], axis=1)
        dw = np.concatenate([block_increments(config.seed, STREAM_IDIO, blk, steps, d, dt) for blk in blocks], axis=1)
        lo = start * BLOCK
        hi = min(lo + dw.shape[1], M)
        n = hi - lo
        dw0, dw = dw0[:, :n], dw[:, :n]
        w0 = np.zeros((steps + 1, n, d))
        np.cumsum(dw0, axis=0, out=w0[1:])
        mean = meanflow.along(w0)
        for c, ctrl in enumerate(controls):
            x = init_all[lo:hi].copy()
            total = np.zeros(n)
            for k in range(steps):
                t = times[k]
                m = mean[k]
                total += _running_cost(data, t, x, m) * dt
                drift = x @ b[k].T + m @ bb[k].T
                if vol_controlled:
                    a = ctrl(k, x, mean=m)
                    target = data.target_vol(t)
                    total += 0.5 * np.sum((a - target) ** 2, axis=-1) * dt
                    x = x + drift * dt + dw[k] @ data.vol.T + a * dw0[k]
                else:
                    a = ctrl(k, x, mean=m)
                    total += 0.5 * np.sum(a * a, axis=-1) * dt
                    x = x + (drift + a) * dt + dw[k] @ data.vol.T + dw0[k] @ data.common_vol.T
            costs[c][lo:hi] = total + _terminal_cost(data, x, mean[-1])
    return costs


def _running_cost(data: LQData, t: float, x: np.ndarray, m: np.ndarray) -> np.ndarray:
    dev = x - m @ data.running_mean_scale(t).T
    return 0.5 * (np.einsum("pi,ij,pj->p", x, data.running_state_cost(t), x)
                  + np.einsum("pi,ij,pj->p", dev, data.running_mean_cost(t), dev))


def _terminal_cost(data: LQData, x: np.ndarray, m: np.ndarray) -> np.ndarray:
    dev = x - m @ data.terminal_mean_scale.T
    return 0.5 * (np.einsum("pi,ij,pj->p", x, data.terminal_state_cost, x)
                  + np.einsum("pi,ij,pj->p", dev, data.terminal_mean_cost, dev))


def estimate_cost(
    config: SimConfig,
    meanflow: MeanFlowFunctional,
    feedback: FeedbackControl | Sequence[FeedbackControl],
    keep_samples: bool = False,
) -> SimOutput | list[SimOutput]:
    """Best-response cost against the equilibrium flow held fixed (Problems 2 and 3).

    Each sample draws its own common-noise path and evaluates the lifted mean
    flow along it.  ``cost`` averages over x0 drawn from the initial law;
    ``extras["cost_at_mean"]`` restarts every sample at the mean initial point
    with the same noise.
    """
    if config.problem not in ("p2", "p3"):
        raise ValueError("estimate_cost covers Problems 2 and 3; use simulate_problem1_cost or simulate_kalman")
    controls = [feedback] if isinstance(feedback, FeedbackControl) else list(feedback)
    spread = _costs_mean_field(config, meanflow, controls, at_mean=False)
    point = _costs_mean_field(config, meanflow, controls, at_mean=True)
    outs = []
    for c, ctrl in enumerate(controls):
        cost, se = _summarise(spread[c])
        cm, sem = _summarise(point[c])
        outs.append(
            SimOutput(
                config.grid, config.seed, config.particles, cost, se,
                samples=spread[c] if keep_samples else None,
                extras={
                    "cost_at_mean": cm,
                    "stderr_at_mean": sem,
                    "label": ctrl.perturbation.label if ctrl.perturbation else "base",
                },
            )
        )
    return outs[0] if isinstance(feedback, FeedbackControl) else outs


# ---------------------------------------------------------------------------
# Finite-population fixed point


def particle_fixed_point(
    config: SimConfig,
    traj: CoefficientTrajectories,
    meanflow: MeanFlowFunctional,
    common_seed: int | None = None,
) -> SimOutput:
    """M particles sharing one common-noise path, driven by their empirical mean.

    Problem 2: dX = ((b - xx) X + (mean_drift - xm) m_emp) dt + vol dW + common_vol dW0.
    Problem 3: dX = (b X + mean_drift m_emp) dt + vol dW + control_t dW0.
    ``common_seed`` (default: the run seed) selects the shared path independently
    of the idiosyncratic noise.
    """
    data, grid = config.data, config.grid
    d = data.dim
    steps, dt = grid.steps, grid.dt
    times = grid.times
    M = config.particles
    shared_seed = config.seed if common_seed is None else common_seed
    w0 = shared_path(grid, d, shared_seed)
    dw0 = np.diff(w0, axis=0)
    lifted = meanflow.along(w0)
    noise = _StepNoise(config.seed, STREAM_IDIO, M, d, dt)
    x = _initial_states(config.seed, M, data)
    emp = np.empty((steps + 1, d))
    emp[0] = x.mean(axis=0)
    for k in range(steps):
        t = times[k]
        m = emp[k]
        if config.problem == "p2":
            drift = x @ (data.drift(t) - traj["xx"][k]).T + (data.mean_drift(t) - traj["xm"][k]) @ m
            common = dw0[k] @ data.common_vol.T
        elif config.problem == "p3":
            drift = x @ data.drift(t).T + data.mean_drift(t) @ m
            common = traj["vol_control"][k] * dw0[k]
        else:
            raise ValueError("particle fixed point covers Problems 2 and 3")
        x = x + drift * dt + noise.draw() @ data.vol.T + common
        emp[k + 1] = x.mean(axis=0)
    return SimOutput(grid, config.seed, M, mean_emp=emp, mean_lifted=lifted, terminal_states=x, shared_noise=w0)


# ---------------------------------------------------------------------------
# Partial observation


def simulate_kalman(
    config: SimConfig,
    traj: CoefficientTrajectories,
    meanflow: MeanFlowFunctional,
    full_information: CoefficientTrajectories | None = None,
    tracked: int = 100,
    checkpoints: Sequence[float] = (0.25, 0.5, 1.0),
) -> SimOutput:
    """Co-simulate state, observation and the filter SDE for M particles.

    All particles share one common-noise path; each has its own state noise,
    observation noise and initial state.  The control is the separation-form
    feedback (full-information gains on the filter) when ``full_information`` is
    given, else the raw partial-observation form.  For the first ``tracked``
    particles the lifted filter functional is evaluated along the realised
    (omega, gamma) and compared with the SDE filter.
    """
    if meanflow.kind != "problem4-eta":
        raise ValueError("simulate_kalman needs the filter functional")
    data, grid = config.data, config.grid
    d = data.dim
    steps, dt = grid.steps, grid.dt
    times = grid.times
    M = config.particles
    tracked = min(tracked, M)
    w0 = shared_path(grid, d, config.seed)
    dw0 = np.diff(w0, axis=0)
    mean = meanflow.mean_along(w0)
    if full_information is not None:
        ctrl = problem4_feedback_rule(full_information, "separation")
    else:
        ctrl = problem4_feedback_rule(traj, "raw")
    gain = traj["filter_gain"]
    gen = traj["filter_generator"]
    coupling = meanflow.coupling
    h = data.obs_matrix
    obs_root = _psd_root(data.obs_cov)
    state_noise = _StepNoise(config.seed, STREAM_IDIO, M, d, dt)
    obs_noise = _StepNoise(config.seed, STREAM_OBS, M, d, dt)
    x = _initial_states(config.seed, M, data)
    eta = np.tile(data.init_mean, (M, 1))
    z = np.zeros((M, d))
    gamma_tracked = np.zeros((steps + 1, tracked, d))
    eta_tracked = np.zeros((steps + 1, tracked, d))
    eta_tracked[0] = eta[:tracked]
    check_idx = sorted({grid.index(c * grid.horizon) for c in checkpoints})
    err_var = {}
    if 0 in check_idx:
        err_var[0] = _cov(x - eta)
    cost = np.zeros(M)
    for k in range(steps):
        t = times[k]
        m = mean[k]
        a = ctrl(k, x, mean=np.broadcast_to(m, x.shape), filter=eta)
        cost += (0.5 * np.sum(a * a, axis=1) + _running_cost(data, t, x, np.broadcast_to(m, x.shape))) * dt
        dz = x @ h.T * dt + obs_noise.draw() @ obs_root.T
        eta = eta + (eta @ gen[k].T + coupling[k] @ m) * dt + dw0[k] @ data.common_vol.T + dz @ gain[k].T
        x = x + (x @ data.drift(t).T + data.mean_drift(t) @ m + a) * dt + state_noise.draw() @ data.vol.T + dw0[k] @ data.common_vol.T
        z = z + dz
        gamma_tracked[k + 1] = z[:tracked]
        eta_tracked[k + 1] = eta[:tracked]
        if k + 1 in check_idx:
            err_var[k + 1] = _cov(x - eta)
    cost += _terminal_cost(data, x, np.broadcast_to(mean[-1], x.shape))
    lifted = meanflow.along(w0[:, None, :], gamma_tracked)
    filt_dev = float(np.max(np.abs(lifted - eta_tracked)))
    c, se = _summarise(cost)
    cov = traj["filter_cov"]
    rel = {}
    for k, v in err_var.items():
        ref = cov[k]
        scale = np.max(np.abs(ref))
        rel[float(times[k])] = float(np.max(np.abs(v - ref)) / scale) if scale > 0 else float(np.max(np.abs(v)))
    return SimOutput(
        grid, config.seed, M, c, se,
        mean_emp=eta_tracked.mean(axis=1),
        mean_lifted=lifted.mean(axis=1),
        terminal_states=x,
        shared_noise=w0,
        extras={
            "filter_deviation": filt_dev,
            "error_variance": {float(times[k]): v for k, v in err_var.items()},
            "variance_relative_error": rel,
        },
    )


def _cov(e: np.ndarray) -> np.ndarray:
    c = e - e.mean(axis=0)
    return c.T @ c / (e.shape[0] - 1)
