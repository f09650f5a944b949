from __future__ import annotations

from typing import Optional

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NUMERICAL = 2
EXIT_VERIFICATION = 3


class LabError(Exception):
    """Base error. Carries a human readable detail and the CLI exit code it maps to."""

    exit_code = EXIT_NUMERICAL

    def __init__(self, detail: str) -> None:
        super().__init__(detail)
        self.detail = detail


class InputError(LabError):
    """Malformed user input: bad dimensions, spec strings, config values."""

    exit_code = EXIT_INPUT


class ConstructionError(InputError):
    """Test-system parameters that fail the injectivity or derivative probes."""


class NumericalError(LabError):
    exit_code = EXIT_NUMERICAL


class RankError(NumericalError):
    """A frame (or its image) failed the numerical rank check."""


class ConvergenceError(NumericalError):
    def __init__(self, detail: str, iterations: int) -> None:
        super().__init__(detail)
        self.iterations = iterations


class ConditioningError(NumericalError):
    pass


class SplittingError(NumericalError):
    """Two subspaces do not form a direct sum of the ambient space."""


class UnsupportedDimensionError(NumericalError):
    pass


class DivergenceError(NumericalError):
    """A series that should decay geometrically does not."""


class CoverageError(NumericalError):
    """The image of a chart does not cover the target chart domain."""


class RootFindingError(NumericalError):
    def __init__(self, detail: str, node_index: Optional[int] = None) -> None:
        super().__init__(detail)
        self.node_index = node_index


class HyperbolicityError(NumericalError):
    pass


class DistortionError(NumericalError):
    pass


class InsufficientDataError(NumericalError):
    def __init__(self, detail: str, hits: int) -> None:
        super().__init__(detail)
        self.hits = hits


class VerificationFailure(LabError):
    """Raised at the CLI boundary when a report or suite has failing rows."""

    exit_code = EXIT_VERIFICATION

    def __init__(self, detail: str, failures: int) -> None:
        super().__init__(detail)
        self.failures = failures
