import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from lifted_mfg.config import load_config
from lifted_mfg.paths import TimeGrid

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
CONFIGS = os.path.join(ROOT, "configs")

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def config_path(name: str) -> str:
    return os.path.join(CONFIGS, f"{name}.cfg")


def bundled(name: str):
    return load_config(config_path(name))


@pytest.fixture(scope="session")
def grid1000():
    return TimeGrid(1.0, 1000)


@pytest.fixture(scope="session")
def grid200():
    return TimeGrid(1.0, 200)


@pytest.fixture(scope="session")
def p2_scalar():
    return bundled("p2_scalar").data


@pytest.fixture(scope="session")
def p2_d2():
    return bundled("p2_d2").data


@pytest.fixture(scope="session")
def p3_data():
    return bundled("p3").data


@pytest.fixture(scope="session")
def p4_scalar():
    return bundled("p4_scalar").data


@pytest.fixture(scope="session")
def p4_d2():
    return bundled("p4_d2").data


def assert_close(a, b, tol):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    err = float(np.max(np.abs(a - b)))
    assert err <= tol, f"max abs error {err:.3e} > {tol:.1e}"


def random_lq_data(rng: np.random.Generator, dim: int, observed: bool = False):
    """Random model satisfying the mean-field structure: scalar mean drift and scalar mean scale."""
    from lifted_mfg.riccati import LQData

    def psd(scale):
        a = rng.normal(size=(dim, dim)) * scale
        return a @ a.T

    kw = dict(
        drift=rng.normal(size=(dim, dim)) * 0.3,
        mean_drift=rng.normal() * 0.3 * np.eye(dim),
        running_state_cost=psd(0.5),
        running_mean_cost=psd(0.5),
        running_mean_scale=rng.uniform(0.0, 1.0) * np.eye(dim),
        terminal_state_cost=psd(0.5),
        terminal_mean_cost=psd(0.5),
        terminal_mean_scale=rng.uniform(0.0, 1.0) * np.eye(dim),
        vol=rng.normal(size=(dim, dim)) * 0.5,
        common_vol=rng.normal(size=(dim, dim)) * 0.5,
        init_mean=rng.normal(size=dim),
        init_cov=psd(0.3),
    )
    if observed:
        kw["obs_matrix"] = rng.normal(size=(dim, dim))
        kw["obs_cov"] = psd(0.5) + 0.5 * np.eye(dim)
    return LQData(dim, 1.0, **kw)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
