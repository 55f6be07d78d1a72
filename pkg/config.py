"""
Configuration management for the transmission solver.
Loads ambient settings from the environment and strict run configurations
from TOML files.
"""

import logging
import os
import tomllib
from dataclasses import dataclass
from pathlib import Path
from typing import Literal, Optional

from dotenv import load_dotenv
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    PositiveFloat,
    PositiveInt,
    ValidationError,
    model_validator,
)

from errors import ConfigError
from geometry import PhysicalParams

# Load environment variables from .env file
load_dotenv()

logger = logging.getLogger(__name__)


@dataclass
class Config:
    """Ambient settings shared by every command."""

    # Logging Configuration
    LOG_LEVEL: str = "INFO"
    LOG_FILE: str = "transmission.log"

    # Solver defaults
    DEFAULT_THREADS: int = 1
    DEFAULT_CG_TOL: float = 1e-10
    DEFAULT_MAX_ITER: int = 20000

    # Artifacts
    OUTPUT_DIR: str = "out"

    @classmethod
    def from_env(cls) -> "Config":
        """Create configuration from environment variables."""
        return cls(
            LOG_LEVEL=os.getenv("LOG_LEVEL", "INFO"),
            LOG_FILE=os.getenv("LOG_FILE", "transmission.log"),
            DEFAULT_THREADS=int(os.getenv("DEFAULT_THREADS", "1")),
            DEFAULT_CG_TOL=float(os.getenv("DEFAULT_CG_TOL", "1e-10")),
            DEFAULT_MAX_ITER=int(os.getenv("DEFAULT_MAX_ITER", "20000")),
            OUTPUT_DIR=os.getenv("OUTPUT_DIR", "out"),
        )

    def validate(self) -> None:
        """Validate the ambient settings."""
        if self.LOG_LEVEL.upper() not in logging.getLevelNamesMapping():
            raise ConfigError(f"LOG_LEVEL is not a logging level: {self.LOG_LEVEL}")
        if self.DEFAULT_THREADS < 1:
            raise ConfigError("DEFAULT_THREADS must be at least 1")
        if not 0.0 < self.DEFAULT_CG_TOL < 1.0:
            raise ConfigError("DEFAULT_CG_TOL must lie in (0, 1)")
        if self.DEFAULT_MAX_ITER < 1:
            raise ConfigError("DEFAULT_MAX_ITER must be positive")


# Global configuration instance
config = Config.from_env()


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class ProfileSection(_Section):
    """Which deflection to use: a builtin name or a CSV file."""

    builtin: Optional[str] = None
    csv: Optional[str] = None
    nx: PositiveInt = 64

    @model_validator(mode="after")
    def _exactly_one_source(self) -> "ProfileSection":
        if (self.builtin is None) == (self.csv is None):
            raise ValueError("exactly one of 'builtin' or 'csv' must be given")
        if self.nx < 4:
            raise ValueError("nx must be at least 4")
        return self


class MeshSection(_Section):
    n1: PositiveInt = 64
    n2: PositiveInt = 64


class SolverSettings(_Section):
    """Conjugate-gradient settings and the lateral boundary mode."""

    cg_tol: PositiveFloat = Field(default_factory=lambda: config.DEFAULT_CG_TOL)
    max_iter: PositiveInt = Field(default_factory=lambda: config.DEFAULT_MAX_ITER)
    lateral_bc: Literal["lift", "insulated"] = "lift"


class ToleranceSection(_Section):
    eps_sign: Optional[PositiveFloat] = None
    eps_touch: Optional[PositiveFloat] = None


class StudySection(_Section):
    levels: list[PositiveInt] = [16, 32, 64, 128]
    schedule: list[PositiveInt] = [1, 2, 4, 8, 16]
    perturbation: str = "cosine(-0.5)"
    family: list[str] = [
        "flat",
        "cosine(-0.5)",
        "cosine(-0.25)",
        "parabola_touch",
        "bump(0.4,0.6)",
    ]
    kappa: PositiveFloat = 10.0
    identity_tol: PositiveFloat = 0.1


class OutputSection(_Section):
    directory: str = Field(default_factory=lambda: config.OUTPUT_DIR)
    timing: bool = False


class RunConfig(_Section):
    """Complete, strictly validated run configuration."""

    params: PhysicalParams = PhysicalParams()
    profile: ProfileSection = ProfileSection(builtin="flat")
    mesh: MeshSection = MeshSection()
    solver: SolverSettings = Field(default_factory=SolverSettings)
    tolerances: ToleranceSection = ToleranceSection()
    study: StudySection = StudySection()
    output: OutputSection = Field(default_factory=OutputSection)


def _describe_validation_error(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        key = ".".join(str(p) for p in item["loc"]) or "<root>"
        parts.append(f"{key}: {item['msg']}")
    return "; ".join(parts)


def parse_run_config(data: dict, base_dir: Optional[Path] = None) -> RunConfig:
    """
    Validate a raw configuration mapping.

    Args:
        data: Mapping as produced by tomllib
        base_dir: Directory relative CSV paths are resolved against

    Returns:
        Validated RunConfig

    Raises:
        ConfigError: On unknown keys or invalid values
    """
    try:
        run_config = RunConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {_describe_validation_error(e)}") from e

    csv_path = run_config.profile.csv
    if csv_path is not None and base_dir is not None and not Path(csv_path).is_absolute():
        profile = run_config.profile.model_copy(update={"csv": str(base_dir / csv_path)})
        run_config = run_config.model_copy(update={"profile": profile})
    return run_config


def load_run_config(path: str | Path) -> RunConfig:
    """
    Load and validate a TOML run configuration.

    Args:
        path: Path to the TOML file

    Returns:
        Validated RunConfig

    Raises:
        ConfigError: If the file is unreadable, not TOML, or fails validation
    """
    path = Path(path)
    try:
        with path.open("rb") as handle:
            data = tomllib.load(handle)
    except OSError as e:
        raise ConfigError(f"cannot read configuration {path}: {e}") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"configuration {path} is not valid TOML: {e}") from e

    run_config = parse_run_config(data, base_dir=path.parent)
    logger.info(f"Loaded run configuration from {path}")
    return run_config
