"""Shared fixtures: the flat two-layer case and small solver settings."""

import numpy as np
import pytest

import config as config_module
from config import SolverSettings
from geometry import PhysicalParams
from profiles import builtin_profile

FAMILY = ["flat", "cosine(-0.5)", "cosine(-0.25)", "parabola_touch", "bump(0.4,0.6)"]


@pytest.fixture(autouse=True)
def _log_to_tmp(tmp_path, monkeypatch):
    monkeypatch.setattr(config_module.config, "LOG_FILE", str(tmp_path / "transmission.log"))


@pytest.fixture
def params() -> PhysicalParams:
    """L = H = d = V = 1, sigma1 = 1, sigma2 = 2."""
    return PhysicalParams()


@pytest.fixture
def flat_settings() -> SolverSettings:
    return SolverSettings(cg_tol=1e-12, max_iter=20000, lateral_bc="insulated")


@pytest.fixture
def lift_settings() -> SolverSettings:
    return SolverSettings(cg_tol=1e-10, max_iter=20000, lateral_bc="lift")


@pytest.fixture
def make_profile(params):
    def make(name: str, nx: int, physical: PhysicalParams | None = None):
        return builtin_profile(name, physical or params, nx)

    return make


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240101)
