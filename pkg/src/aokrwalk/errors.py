"""Exception hierarchy shared by the simulator and the command line."""

from __future__ import annotations


class AokrError(Exception):
    """Base class for all simulator errors."""

    exit_code = 1


class ConfigError(AokrError, ValueError):
    """Invalid, missing or out-of-range configuration value."""

    exit_code = 2

    def __init__(self, message: str, key: str | None = None, line: int | None = None):
        self.key = key
        self.line = line
        where = ""
        if key is not None:
            where = f"{key}"
            if line is not None:
                where += f" (line {line})"
            where += ": "
        super().__init__(where + message)


class DomainError(AokrError, ValueError):
    """Argument outside the mathematical domain of an operation."""

    exit_code = 2


class TruncationError(AokrError):
    """Probability reached the edge of the momentum grid."""

    exit_code = 3


class FitError(AokrError):
    """A power-law fit had too few admissible points."""

    exit_code = 4


class SEProjectionError(AokrError):
    """Both projection branches of a spontaneous-emission event are empty."""

    exit_code = 1


class TrajectoryError(AokrError):
    """Wraps a failure inside one trajectory of an ensemble."""

    def __init__(self, beta_index: int, trajectory_index: int, cause: AokrError):
        self.beta_index = beta_index
        self.trajectory_index = trajectory_index
        self.cause = cause
        self.exit_code = cause.exit_code
        super().__init__(
            f"trajectory (beta_index={beta_index}, trajectory_index={trajectory_index}) "
            f"failed: {cause}"
        )
