"""
Exception hierarchy for the transmission solver.
Each error carries the process exit code the CLI reports for it.
"""

from typing import Any, Optional


class TransmissionError(Exception):
    """Base class for all expected failures."""

    exit_code: int = 1

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.context = context


class ProfileError(TransmissionError):
    """Malformed deflection samples or grid."""

    exit_code = 4


class ConfigError(TransmissionError):
    """Malformed run configuration or unknown keys."""

    exit_code = 4


class InadmissibleProfileError(TransmissionError):
    """The profile violates the admissibility conditions."""

    exit_code = 2

    def __init__(self, message: str, admissibility: Any = None, index: Optional[int] = None):
        super().__init__(message, index=index)
        self.admissibility = admissibility
        self.index = index


class CollapseError(TransmissionError):
    """The lower-layer map was evaluated on a collapsed column."""

    exit_code = 4


class DegenerateElementError(TransmissionError):
    """An active element has a non-positive Jacobian."""

    exit_code = 3

    def __init__(self, message: str, element: int):
        super().__init__(message, element=element)
        self.element = element


class ConvergenceError(TransmissionError):
    """Conjugate gradients did not reach the requested tolerance."""

    exit_code = 3

    def __init__(self, message: str, residual: float, iterations: int):
        super().__init__(message, residual=residual, iterations=iterations)
        self.residual = residual
        self.iterations = iterations


class NegativeCurvatureError(TransmissionError):
    """The system matrix is not positive definite (assembly bug)."""

    exit_code = 3


class DiagnosticsError(TransmissionError):
    """A diagnostic refused its input."""

    exit_code = 4


class ArtifactError(TransmissionError):
    """Reading or writing an artifact failed."""

    exit_code = 4


__all__ = [
    'TransmissionError',
    'ProfileError',
    'ConfigError',
    'InadmissibleProfileError',
    'CollapseError',
    'DegenerateElementError',
    'ConvergenceError',
    'NegativeCurvatureError',
    'DiagnosticsError',
    'ArtifactError',
]
