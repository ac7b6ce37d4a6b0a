"""Model coefficients of the linear-quadratic game."""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, fields
from typing import Callable

import numpy as np

from ..errors import PreconditionWarning

# Tolerance for symmetry/PSD checks on loaded data.
_CHECK_TOL = 1e-10
# Number of sample times used to check time-dependent coefficients.
_CHECK_SAMPLES = 11


class TimeFunction:
    """A coefficient that is either constant or a callable of time."""

    __slots__ = ("_fn", "_const", "shape")

    def __init__(self, value, shape: tuple[int, ...]):
        self.shape = shape
        if callable(value):
            self._fn = value
            self._const = None
            probe = np.asarray(value(0.0), dtype=float)
            if probe.shape != shape:
                raise ValueError(f"coefficient function returns shape {probe.shape}, expected {shape}")
        else:
            arr = np.array(value, dtype=float)
            if arr.ndim == 0:
                arr = arr * (np.eye(shape[0]) if len(shape) == 2 else np.ones(shape))
            arr = arr.reshape(shape)
            arr.setflags(write=False)
            self._const = arr
            self._fn = None

    @property
    def is_constant(self) -> bool:
        return self._const is not None

    @property
    def constant(self) -> np.ndarray:
        if self._const is None:
            raise ValueError("coefficient is time-dependent")
        return self._const

    def __call__(self, t: float) -> np.ndarray:
        if self._const is not None:
            return self._const
        return np.asarray(self._fn(t), dtype=float)


_TIME_DEPENDENT = ("drift", "mean_drift", "running_state_cost", "running_mean_cost", "running_mean_scale")
_TIME_VECTOR = ("target_vol",)
_CONSTANT_MATRIX = (
    "terminal_state_cost",
    "terminal_mean_cost",
    "terminal_mean_scale",
    "vol",
    "common_vol",
    "obs_matrix",
    "obs_cov",
    "init_cov",
)
_CONSTANT_VECTOR = ("init_mean",)

FIELD_NAMES = _TIME_DEPENDENT + _TIME_VECTOR + _CONSTANT_MATRIX + _CONSTANT_VECTOR


@dataclass(frozen=True, eq=False)
class LQData:
    """All coefficients of the LQ model; unspecified entries default to zero
    (identity for the observation covariance).

    Time-dependent entries accept a constant array or a callable ``t -> array``.
    """

    dim: int
    horizon: float
    drift: object = None
    mean_drift: object = None
    running_state_cost: object = None
    running_mean_cost: object = None
    running_mean_scale: object = None
    target_vol: object = None
    terminal_state_cost: object = None
    terminal_mean_cost: object = None
    terminal_mean_scale: object = None
    vol: object = None
    common_vol: object = None
    obs_matrix: object = None
    obs_cov: object = None
    init_cov: object = None
    init_mean: object = None
    name: str = field(default="", compare=False)

    def __post_init__(self):
        d = int(self.dim)
        if d < 1:
            raise ValueError("dimension must be positive")
        if not np.isfinite(self.horizon) or self.horizon <= 0:
            raise ValueError(f"horizon must be positive, got {self.horizon}")
        mat, vec = (d, d), (d,)
        for name in _TIME_DEPENDENT:
            object.__setattr__(self, name, TimeFunction(_default(getattr(self, name), mat), mat))
        for name in _TIME_VECTOR:
            object.__setattr__(self, name, TimeFunction(_default(getattr(self, name), vec), vec))
        for name in _CONSTANT_MATRIX:
            default = np.eye(d) if name == "obs_cov" else np.zeros(mat)
            val = getattr(self, name)
            arr = np.array(default if val is None else val, dtype=float)
            if arr.ndim == 0:
                arr = arr * np.eye(d)
            arr = arr.reshape(mat)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        val = self.init_mean
        arr = np.zeros(vec) if val is None else np.array(val, dtype=float).reshape(vec)
        arr.setflags(write=False)
        object.__setattr__(self, "init_mean", arr)
        object.__setattr__(self, "dim", d)
        object.__setattr__(self, "horizon", float(self.horizon))
        self._check_structure()

    def _check_structure(self):
        for name in ("terminal_state_cost", "terminal_mean_cost", "init_cov", "obs_cov"):
            m = getattr(self, name)
            if not _is_symmetric(m):
                raise ValueError(f"{name} must be symmetric")
        for name in ("terminal_state_cost", "terminal_mean_cost", "init_cov"):
            if not _is_psd(getattr(self, name)):
                raise ValueError(f"{name} must be positive semidefinite")
        if np.min(np.linalg.eigvalsh(self.obs_cov)) <= 0:
            raise ValueError("obs_cov must be positive definite")
        for t in self.check_times():
            for name in ("running_state_cost", "running_mean_cost"):
                m = getattr(self, name)(t)
                if not _is_symmetric(m) or not _is_psd(m):
                    raise ValueError(f"{name} must be symmetric PSD (fails at t={t:g})")

    def check_times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, _CHECK_SAMPLES)

    # -- derived quantities -------------------------------------------------

    @property
    def diffusion(self) -> np.ndarray:
        """Total state covariance rate: vol vol^T + common_vol common_vol^T."""
        return self.vol @ self.vol.T + self.common_vol @ self.common_vol.T

    @property
    def common_diffusion(self) -> np.ndarray:
        return self.common_vol @ self.common_vol.T

    @property
    def obs_precision(self) -> np.ndarray:
        return np.linalg.inv(self.obs_cov)

    def terminal_cost(self, x, mean) -> float:
        x = np.asarray(x, dtype=float)
        dev = x - self.terminal_mean_scale @ np.asarray(mean, dtype=float)
        return 0.5 * float(x @ self.terminal_state_cost @ x + dev @ self.terminal_mean_cost @ dev)

    def running_cost(self, t: float, x, mean) -> float:
        x = np.asarray(x, dtype=float)
        dev = x - self.running_mean_scale(t) @ np.asarray(mean, dtype=float)
        return 0.5 * float(x @ self.running_state_cost(t) @ x + dev @ self.running_mean_cost(t) @ dev)

    def check_mean_field_assumptions(self, strict: bool = True) -> list[str]:
        """Structural and solvability conditions for the mean-field problems.

        Structural failures (d > 1 only) raise when ``strict``; PSD solvability
        failures emit :class:`PreconditionWarning` and are returned.
        """
        problems: list[str] = []
        d = self.dim
        for t in self.check_times():
            qbs = self.running_mean_cost(t) @ self.running_mean_scale(t)
            tilde = self.running_state_cost(t) + self.running_mean_cost(t) - qbs
            if d > 1:
                mb = self.mean_drift(t)
                if not np.allclose(mb, mb[0, 0] * np.eye(d), atol=_CHECK_TOL):
                    msg = f"mean_drift must be a scalar multiple of the identity (t={t:g})"
                    if strict:
                        raise ValueError(msg)
                    problems.append(msg)
                if not _is_symmetric(tilde):
                    msg = f"running_state_cost + running_mean_cost - running_mean_cost @ running_mean_scale must be symmetric (t={t:g})"
                    if strict:
                        raise ValueError(msg)
                    problems.append(msg)
            if not _is_psd(0.5 * (tilde + tilde.T)):
                problems.append(f"running cost combination not PSD at t={t:g}")
        qbs = self.terminal_mean_cost @ self.terminal_mean_scale
        tilde = self.terminal_state_cost + self.terminal_mean_cost - qbs
        if d > 1 and not _is_symmetric(tilde):
            msg = "terminal_state_cost + terminal_mean_cost - terminal_mean_cost @ terminal_mean_scale must be symmetric"
            if strict:
                raise ValueError(msg)
            problems.append(msg)
        if not _is_psd(0.5 * (tilde + tilde.T)):
            problems.append("terminal cost combination not PSD")
        for p in problems:
            warnings.warn(p, PreconditionWarning, stacklevel=2)
        return problems

    def replace(self, **changes) -> "LQData":
        kw = {f.name: getattr(self, f.name) for f in fields(self)}
        for k, v in list(kw.items()):
            if isinstance(v, TimeFunction):
                kw[k] = v.constant if v.is_constant else v._fn
        kw.update(changes)
        return LQData(**kw)

    def scaled_costs(self, factor: float) -> "LQData":
        """Same model with every cost weight multiplied by ``factor``."""
        changes = {}
        for name in ("running_state_cost", "running_mean_cost"):
            tf = getattr(self, name)
            changes[name] = factor * tf.constant if tf.is_constant else (lambda t, tf=tf: factor * tf(t))
        changes["terminal_state_cost"] = factor * self.terminal_state_cost
        changes["terminal_mean_cost"] = factor * self.terminal_mean_cost
        return self.replace(**changes)


def _default(value, shape):
    return np.zeros(shape) if value is None else value


def _is_symmetric(m: np.ndarray) -> bool:
    return bool(np.allclose(m, m.T, atol=_CHECK_TOL * max(1.0, float(np.max(np.abs(m))))))


def _is_psd(m: np.ndarray) -> bool:
    sym = 0.5 * (m + m.T)
    return bool(np.min(np.linalg.eigvalsh(sym)) >= -_CHECK_TOL * max(1.0, float(np.max(np.abs(m)))))


CoefficientFn = Callable[[float], np.ndarray]
