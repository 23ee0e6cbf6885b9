"""Exception hierarchy.

Two families matter to the CLI: configuration problems (exit code 2) and
data problems (exit code 3). Everything else is a plain ``HankelwaveError``.
"""

from __future__ import annotations


class HankelwaveError(Exception):
    """Base class for all package errors."""


class ConfigError(HankelwaveError, ValueError):
    """Invalid parameters, schedules or configuration files."""


class ParameterError(ConfigError):
    pass


class DataError(HankelwaveError, ValueError):
    """Input data that cannot be processed as given."""


class FormatError(DataError):
    def __init__(self, message: str, row: int | None = None):
        self.row = row
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)


class TimingError(DataError):
    def __init__(self, message: str, worst_gap: float):
        self.worst_gap = worst_gap
        super().__init__(f"{message} (worst gap {worst_gap:.6g} s)")


class ScenarioError(DataError):
    pass


class DegenerateInputError(DataError):
    pass


class PropagationError(DataError):
    pass


class InsufficientDataError(DataError):
    pass


class DegenerateColumnError(DataError):
    def __init__(self, column: int):
        self.column = column
        super().__init__(f"column {column} has zero norm")


class ShapeError(DataError):
    pass


class DivergenceError(HankelwaveError):
    def __init__(self, iteration: int):
        self.iteration = iteration
        super().__init__(f"non-finite iterate at iteration {iteration}")


class TrainingError(HankelwaveError):
    pass


class AmbiguityError(TrainingError):
    pass


class StaleOperatorError(HankelwaveError):
    pass
