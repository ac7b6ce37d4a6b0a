"""Line-oriented run configuration.

Format: ``[section]`` headers and ``key = value`` lines; ``#`` starts a
comment.  Numbers, vectors and matrices are Python literals (row-major nested
lists); strings may be bare.  Sections:

``[run]``        problem, steps, seed, particles, battery, tol, out, data
``[data]``       model coefficients (constant in time), dim and horizon
``[thresholds]`` pass/fail limits used by the CLI checks

``data = other.cfg`` in ``[run]`` reads the ``[data]`` section of another file
(relative to this one) instead of an inline one.
"""

from __future__ import annotations

import ast
import math
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigError
from .riccati import LQData
from .riccati.data import FIELD_NAMES

PROBLEMS = ("p1", "p2", "p3", "p4")

DEFAULT_THRESHOLDS: dict[str, float] = {
    "closed_form": 1e-6,
    "cost_se": 3.0,
    "cost_dt": 1.0,
    "residual_analytic": 1e-6,
    "residual_fd": 1e-3,
    "master": 1e-10,
    "fixed_point": 0.02,
    "fixed_point_identity": 1e-12,
    "optimizer": 1e-4,
    "separation": 1e-8,
    "feedback_forms": 1e-8,
    "filter_cov": 1e-6,
    "variance_rel": 0.05,
    "filter_deviation_dt": 10.0,
    "compensator_error": 1e-4,
    "compensator_order": 0.9,
    "compensator_zero": 1e-4,
    "heat": 1e-3,
}

_RUN_DEFAULTS = {
    "problem": None,
    "steps": 1000,
    "seed": 0,
    "particles": 100_000,
    "battery": 20,
    "tol": 1e-4,
    "out": None,
    "data": None,
}
_POSITIVE_INT = ("steps", "particles", "battery")
_DATA_KEYS = ("dim", "horizon", "name") + FIELD_NAMES


@dataclass(frozen=True)
class RunConfig:
    problem: str
    data: LQData | None
    steps: int = 1000
    seed: int = 0
    particles: int = 100_000
    battery: int = 20
    tol: float = 1e-4
    out: str | None = None
    thresholds: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_THRESHOLDS))
    source: str = "<string>"

    @property
    def horizon(self) -> float:
        return 1.0 if self.data is None else self.data.horizon

    def with_overrides(self, **kw) -> "RunConfig":
        """Apply CLI overrides (None values are ignored) with the same validation as the file."""
        kw = {k: v for k, v in kw.items() if v is not None}
        for key in _POSITIVE_INT:
            if key in kw and int(kw[key]) < 1:
                raise ConfigError(f"{key} must be a positive integer, got {kw[key]}", source="override")
        if "tol" in kw and not float(kw["tol"]) > 0:
            raise ConfigError(f"tol must be positive, got {kw['tol']}", source="override")
        if "seed" in kw and int(kw["seed"]) < 0:
            raise ConfigError("seed must be non-negative", source="override")
        return replace(self, **kw)


@dataclass
class _Entry:
    value: object
    line: int


def _parse_sections(text: str, source: str) -> tuple[dict[str, dict[str, _Entry]], dict[str, int]]:
    sections: dict[str, dict[str, _Entry]] = {}
    headers: dict[str, int] = {}
    current = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            if not line.endswith("]"):
                raise ConfigError(f"malformed section header {raw.strip()!r}", lineno, source)
            current = line[1:-1].strip()
            if current not in ("run", "data", "thresholds"):
                raise ConfigError(f"unknown section [{current}]", lineno, source)
            if current in sections:
                raise ConfigError(f"duplicate section [{current}]", lineno, source)
            sections[current] = {}
            headers[current] = lineno
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw.strip()!r}", lineno, source)
        if current is None:
            raise ConfigError("key outside of any section", lineno, source)
        key, value = (p.strip() for p in line.split("=", 1))
        if not key:
            raise ConfigError("empty key", lineno, source)
        if key in sections[current]:
            raise ConfigError(f"duplicate key {key!r}", lineno, source)
        sections[current][key] = _Entry(_literal(value), lineno)
    return sections, headers


def _literal(text: str):
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def _number(entry: _Entry, key: str, source: str) -> float:
    v = entry.value
    if isinstance(v, bool) or not isinstance(v, (int, float)) or not math.isfinite(v):
        raise ConfigError(f"{key} must be a finite number, got {v!r}", entry.line, source)
    return float(v)


def _positive_int(entry: _Entry, key: str, source: str) -> int:
    v = entry.value
    if isinstance(v, bool) or not isinstance(v, int) or v < 1:
        raise ConfigError(f"{key} must be a positive integer, got {v!r}", entry.line, source)
    return v


def _array(entry: _Entry, key: str, source: str):
    v = entry.value
    if isinstance(v, str) or isinstance(v, bool):
        raise ConfigError(f"{key} must be a number or a bracketed list, got {v!r}", entry.line, source)
    try:
        arr = np.array(v, dtype=float)
    except (ValueError, TypeError) as err:
        raise ConfigError(f"{key}: {err}", entry.line, source) from None
    if not np.all(np.isfinite(arr)):
        raise ConfigError(f"{key} has non-finite entries", entry.line, source)
    return arr


def _build_data(entries: dict[str, _Entry], source: str, header_line: int) -> LQData:
    for key, e in entries.items():
        if key not in _DATA_KEYS:
            raise ConfigError(f"unknown data key {key!r}", e.line, source)
    if "horizon" not in entries:
        raise ConfigError("[data] needs horizon", header_line, source)
    horizon = _number(entries["horizon"], "horizon", source)
    if horizon <= 0:
        raise ConfigError(f"horizon must be positive, got {horizon:g}", entries["horizon"].line, source)
    dim = _positive_int(entries["dim"], "dim", source) if "dim" in entries else 1
    kwargs = {}
    for key in FIELD_NAMES:
        if key in entries:
            arr = _array(entries[key], key, source)
            expected = dim if key in ("init_mean", "target_vol") else dim * dim
            if arr.size not in (1, expected):
                raise ConfigError(f"{key} has {arr.size} entries, expected 1 or {expected}", entries[key].line, source)
            kwargs[key] = arr
    name = str(entries["name"].value) if "name" in entries else os.path.basename(source)
    try:
        return LQData(dim, horizon, name=name, **kwargs)
    except ValueError as err:
        msg = str(err)
        line = next((entries[k].line for k in FIELD_NAMES if k in entries and msg.startswith(k)), header_line)
        raise ConfigError(msg, line, source) from None


def parse_config(text: str, source: str = "<string>", base_dir: str | None = None) -> RunConfig:
    sections, headers = _parse_sections(text, source)
    run = sections.get("run", {})
    for key, e in run.items():
        if key not in _RUN_DEFAULTS:
            raise ConfigError(f"unknown run key {key!r}", e.line, source)
    if "problem" not in run:
        raise ConfigError("[run] needs problem = p1|p2|p3|p4", headers.get("run", 1), source)
    problem = str(run["problem"].value)
    if problem not in PROBLEMS:
        raise ConfigError(f"problem must be one of {', '.join(PROBLEMS)}, got {problem!r}", run["problem"].line, source)
    opts = {}
    for key in _POSITIVE_INT:
        if key in run:
            opts[key] = _positive_int(run[key], key, source)
    if "seed" in run:
        v = run["seed"].value
        if isinstance(v, bool) or not isinstance(v, int) or v < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {v!r}", run["seed"].line, source)
        opts["seed"] = v
    if "tol" in run:
        tol = _number(run["tol"], "tol", source)
        if tol <= 0:
            raise ConfigError(f"tol must be positive, got {tol:g}", run["tol"].line, source)
        opts["tol"] = tol
    if "out" in run:
        opts["out"] = str(run["out"].value)

    base_dir = base_dir if base_dir is not None else "."
    data = None
    if "data" in run:
        if "data" in sections:
            raise ConfigError("give either data = <file> or a [data] section, not both", run["data"].line, source)
        ref = os.path.join(base_dir, str(run["data"].value))
        if not os.path.isfile(ref):
            raise ConfigError(f"data file {ref!r} does not exist", run["data"].line, source)
        with open(ref, encoding="utf-8") as fh:
            other, other_headers = _parse_sections(fh.read(), ref)
        if "data" not in other:
            raise ConfigError(f"{ref} has no [data] section", run["data"].line, source)
        data = _build_data(other["data"], ref, other_headers["data"])
    elif "data" in sections:
        data = _build_data(sections["data"], source, headers["data"])
    if data is None:
        if problem != "p1":
            raise ConfigError(f"{problem} needs a [data] section", run["problem"].line, source)
    elif problem == "p1" and data.dim != 1:
        raise ConfigError("problem p1 is scalar", run["problem"].line, source)

    thresholds = dict(DEFAULT_THRESHOLDS)
    for key, e in sections.get("thresholds", {}).items():
        if key not in DEFAULT_THRESHOLDS:
            raise ConfigError(f"unknown threshold {key!r}", e.line, source)
        v = _number(e, key, source)
        if v <= 0:
            raise ConfigError(f"threshold {key} must be positive", e.line, source)
        thresholds[key] = v
    return RunConfig(problem=problem, data=data, thresholds=thresholds, source=source, **opts)


def load_config(path: str) -> RunConfig:
    if not os.path.isfile(path):
        raise ConfigError(f"config file {path!r} does not exist")
    with open(path, encoding="utf-8") as fh:
        text = fh.read()
    return parse_config(text, source=path, base_dir=os.path.dirname(os.path.abspath(path)))


__all__ = ["RunConfig", "parse_config", "load_config", "DEFAULT_THRESHOLDS", "PROBLEMS"]
