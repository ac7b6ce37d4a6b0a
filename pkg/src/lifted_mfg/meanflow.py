"""Lifted mean-flow functionals built from solved coefficient trajectories.

Each functional is affine in the present value(s) and in history integrals of
the path argument(s):

* ``problem2`` / ``problem4-mu``: conditional mean of the state given the common noise,
  ``Phi_t (m0 + int_0^t Phi_s^-1 K_s common_vol omega_s ds) + common_vol y``.
* ``problem3``: same with propagator generator b + mean_drift, history weight
  ``Phi_s^-1 [(b + mean_drift) beta_s - beta'_s]`` and y-loading ``beta_t`` (the volatility control).
* ``problem4-eta``: conditional mean given common noise and observations (the filter).

History integrals use the cadlag trapezoid rule of :class:`paths.HistoryView`.
"""

from __future__ import annotations

import threading
from collections import OrderedDict

import numpy as np

from .compensator import LiftedFunctional
from .errors import NearSingular
from .paths import HistoryView, Path, TimeGrid
from .riccati import CoefficientTrajectories, LQData, filter_covariance_rhs

KINDS = ("problem2", "problem3", "problem4-mu", "problem4-eta")
_PROBLEM_OF_KIND = {"problem2": "p2", "problem3": "p3", "problem4-mu": "p4", "problem4-eta": "p4"}
_CACHE_SIZE = 256


def _inverse(mats: np.ndarray, grid: TimeGrid, what: str) -> np.ndarray:
    dets = np.abs(np.linalg.det(mats))
    if np.any(dets < 1e-12):
        k = int(np.argmax(dets < 1e-12))
        raise NearSingular(f"{what} is near singular at t={grid.times[k]:.6g}")
    return np.linalg.inv(mats)


def _apply(weights: np.ndarray, values: np.ndarray) -> np.ndarray:
    """weights (K, p, d) times values (K, ..., d) -> (K, ..., p)."""
    return np.einsum("kij,k...j->k...i", weights, values)


def _cumulate(right: np.ndarray, left: np.ndarray, dt: float) -> np.ndarray:
    """Running integrals C_0..C_n from right samples at 0..n-1 and left samples at 1..n."""
    cells = 0.5 * dt * (right + left)
    out = np.zeros((right.shape[0] + 1,) + right.shape[1:])
    np.cumsum(cells, axis=0, out=out[1:])
    return out


class MeanFlowFunctional:
    """Evaluator of one lifted mean-flow functional.

    ``at_index(n, omega, y[, gamma, z])`` evaluates on strict histories and is
    wrapped by :meth:`lifted` for the compensator routines.  ``along`` evaluates
    at (t_k, omega, omega_{t_k}[, gamma, gamma_{t_k}]) for every k at once on
    batches of continuous paths.
    """

    def __init__(self, kind: str, traj: CoefficientTrajectories, data: LQData):
        if kind not in KINDS:
            raise ValueError(f"unknown mean-flow kind {kind!r}; expected one of {KINDS}")
        if traj.problem != _PROBLEM_OF_KIND[kind]:
            raise ValueError(f"{kind} needs trajectories of {_PROBLEM_OF_KIND[kind]}, got {traj.problem}")
        self.kind = kind
        self.traj = traj
        self.data = data
        self.grid = traj.grid
        self.dim = data.dim
        self._lock = threading.Lock()
        self._cache: OrderedDict = OrderedDict()
        self._prepare()

    # -- setup ----------------------------------------------------------------

    def _prepare(self):
        grid, data, traj = self.grid, self.data, self.traj
        d = self.dim
        n1 = grid.steps + 1
        times = grid.times
        self.propagator = np.array(traj["mean_propagator"])
        inv_prop = _inverse(self.propagator, grid, "mean propagator")
        common = data.common_vol
        if self.kind == "problem3":
            beta = np.array(traj["vol_control"]).reshape(n1)
            beta_rate = np.gradient(beta, grid.dt, edge_order=2) if grid.steps >= 2 else np.zeros(n1)
            gen = np.array([data.drift(t) + data.mean_drift(t) for t in times])
            self.generator = gen
            self.mean_weights = inv_prop @ (gen * beta[:, None, None] - beta_rate[:, None, None] * np.eye(d))
            self.y_loading = beta[:, None, None] * np.eye(d)
        else:
            gen = np.array(traj["mean_generator"])
            self.generator = gen
            self.mean_weights = inv_prop @ gen @ common
            self.y_loading = np.broadcast_to(common, (n1, d, d))
        if self.kind == "problem4-eta":
            filt_prop = np.array(traj["filter_propagator"])
            inv_filt = _inverse(filt_prop, grid, "filter propagator")
            filt_gen = np.array(traj["filter_generator"])
            cov = np.array(traj["filter_cov"])
            cov_rate = np.array([filter_covariance_rhs(data, t, cov[k]) for k, t in enumerate(times)])
            obs = data.obs_matrix.T @ data.obs_precision
            coupling = np.array([data.mean_drift(t) - traj["xm"][k] for k, t in enumerate(times)])
            self.filter_propagator = filt_prop
            self.filter_generator = filt_gen
            self.coupling = coupling
            self.eta_mean_weights = inv_filt @ coupling
            self.eta_common_weights = inv_filt @ filt_gen @ common
            self.eta_obs_weights = inv_filt @ (filt_gen @ cov - cov_rate) @ obs
            self.z_loading = cov @ obs
        self.initial_mean = data.init_mean

    # -- pointwise evaluation ---------------------------------------------------

    def _mean_history(self, hist: HistoryView) -> np.ndarray:
        """Running integrals C_0..C_n of the mean weight against the history."""
        n = hist.n
        right = _apply(self.mean_weights[:n], hist.values)
        left = _apply(self.mean_weights[1:n + 1], hist.left_limits)
        return _cumulate(right, left, self.grid.dt)

    def _cached(self, paths: tuple, n: int, tag: str, compute):
        # Only stored paths are cached; perturbed views are short-lived.
        if not all(isinstance(p, Path) for p in paths):
            return compute()
        key = (tuple(id(p) for p in paths), n, tag)
        with self._lock:
            hit = self._cache.get(key)
            if hit is not None and all(a is b for a, b in zip(hit[0], paths)):
                self._cache.move_to_end(key)
                return hit[1]
        value = compute()
        with self._lock:
            self._cache[key] = (paths, value)
            while len(self._cache) > _CACHE_SIZE:
                self._cache.popitem(last=False)
        return value

    def mean_offset(self, hist: HistoryView) -> np.ndarray:
        """Phi_t (m0 + C_t): the y-independent part of the mean functional."""
        n = hist.n
        c = self._cached((hist.path,), n, "mean", lambda: self._mean_history(hist)[-1])
        return self.propagator[n] @ (self.initial_mean + c)

    def _eta_history(self, h_omega: HistoryView, h_gamma: HistoryView) -> np.ndarray:
        n = h_omega.n
        c = self._mean_history(h_omega)
        level = np.einsum("kij,kj->ki", self.propagator[: n + 1], self.initial_mean + c)
        common = self.data.common_vol
        r_om, l_om = h_omega.values, h_omega.left_limits
        mean_r = level[:n] + r_om @ common.T
        mean_l = level[1:] + l_om @ common.T
        right = (
            _apply(self.eta_mean_weights[:n], mean_r)
            + _apply(self.eta_common_weights[:n], r_om)
            + _apply(self.eta_obs_weights[:n], h_gamma.values)
        )
        left = (
            _apply(self.eta_mean_weights[1:n + 1], mean_l)
            + _apply(self.eta_common_weights[1:n + 1], l_om)
            + _apply(self.eta_obs_weights[1:n + 1], h_gamma.left_limits)
        )
        return _cumulate(right, left, self.grid.dt)[-1]

    def at_index(self, n: int, omega, y, gamma=None, z=None) -> np.ndarray:
        y = np.asarray(y, dtype=float).reshape(self.dim)
        h_omega = HistoryView(omega, n)
        if self.kind != "problem4-eta":
            return self.mean_offset(h_omega) + self.y_loading[n] @ y
        if gamma is None or z is None:
            raise ValueError("the filter functional needs gamma and z")
        z = np.asarray(z, dtype=float).reshape(self.dim)
        h_gamma = HistoryView(gamma, n)
        hist = self._cached((omega, gamma), n, "eta", lambda: self._eta_history(h_omega, h_gamma))
        return (
            self.filter_propagator[n] @ (self.initial_mean + hist)
            + self.data.common_vol @ y
            + self.z_loading[n] @ z
        )

    def __call__(self, t: float, omega, y, gamma=None, z=None) -> np.ndarray:
        return self.at_index(self.grid.index(t), omega, y, gamma, z)

    def lifted(self) -> LiftedFunctional:
        if self.kind == "problem4-eta":
            def ev(h_omega, h_gamma, y, z):
                return self.at_index(h_omega.n, h_omega.path, y, h_gamma.path, z)

            return LiftedFunctional(ev, arity=2, name=self.kind)

        def ev(hist, y):
            return self.at_index(hist.n, hist.path, y)

        return LiftedFunctional(ev, arity=1, name=self.kind)

    # -- derivative identities ------------------------------------------------------

    def y_gradient(self, t: float) -> np.ndarray:
        return np.array(self.y_loading[self.grid.index(t)])

    def z_gradient(self, t: float) -> np.ndarray:
        if self.kind != "problem4-eta":
            raise ValueError("only the filter functional depends on z")
        return np.array(self.z_loading[self.grid.index(t)])

    def compensated_rate(self, t: float, omega, y, gamma=None, z=None) -> np.ndarray:
        """Expected compensated time derivative: linear drift of the flow at (t, omega, y[, gamma, z])."""
        n = self.grid.index(t)
        value = self.at_index(n, omega, y, gamma, z)
        if self.kind != "problem4-eta":
            return self.generator[n] @ value
        mean = self._companion().at_index(n, omega, y)
        return self.filter_generator[n] @ value + self.coupling[n] @ mean

    def _companion(self) -> "MeanFlowFunctional":
        comp = getattr(self, "_companion_mu", None)
        if comp is None:
            comp = MeanFlowFunctional("problem4-mu", self.traj, self.data)
            self._companion_mu = comp
        return comp

    # -- batch evaluation along paths ---------------------------------------------

    def along(self, omega_values: np.ndarray, gamma_values: np.ndarray | None = None) -> np.ndarray:
        """Evaluate at (t_k, omega, omega_{t_k}) for all k on continuous paths.

        ``omega_values`` has shape (N+1, d) or (N+1, P, d); the same for gamma.
        Returns an array with the broadcast batch shape.
        """
        om = np.asarray(omega_values, dtype=float)
        dt = self.grid.dt
        c = _cumulate(_apply(self.mean_weights[:-1], om[:-1]), _apply(self.mean_weights[1:], om[1:]), dt)
        level = _apply(self.propagator, self.initial_mean + c)
        mean = level + _apply(self.y_loading, om)
        if self.kind != "problem4-eta":
            return mean
        if gamma_values is None:
            raise ValueError("the filter functional needs gamma paths")
        ga = np.asarray(gamma_values, dtype=float)
        integrand = (
            _apply(self.eta_mean_weights, mean)
            + _apply(self.eta_common_weights, om)
            + _apply(self.eta_obs_weights, ga)
        )
        hist = _cumulate(integrand[:-1], integrand[1:], dt)
        return _apply(self.filter_propagator, self.initial_mean + hist) + _apply(
            np.broadcast_to(self.data.common_vol, self.propagator.shape), om
        ) + _apply(self.z_loading, ga)

    def mean_along(self, omega_values: np.ndarray) -> np.ndarray:
        """Companion conditional mean (given the common noise only) along paths."""
        if self.kind != "problem4-eta":
            return self.along(omega_values)
        return self._companion().along(omega_values)


def mu_bar_problem2(traj: CoefficientTrajectories, data: LQData, t: float, omega, y) -> np.ndarray:
    return MeanFlowFunctional("problem2", traj, data)(t, omega, y)


def mu_bar_problem3(traj: CoefficientTrajectories, data: LQData, t: float, omega, y) -> np.ndarray:
    return MeanFlowFunctional("problem3", traj, data)(t, omega, y)


def eta_bar_problem4(traj: CoefficientTrajectories, data: LQData, t: float, omega, gamma, y, z) -> np.ndarray:
    return MeanFlowFunctional("problem4-eta", traj, data)(t, omega, y, gamma, z)
