"""Exception types raised across the package."""

from __future__ import annotations


class SgldVrError(Exception):
    """Base class for all package errors."""


class InvalidDimensionError(SgldVrError, ValueError):
    pass


class InvalidSpectrumError(SgldVrError, ValueError):
    pass


class InvalidRegularizerError(SgldVrError, ValueError):
    pass


class DatasetTooSmallError(SgldVrError, ValueError):
    pass


class InvalidBatchError(SgldVrError, ValueError):
    pass


class ConfigError(SgldVrError, ValueError):
    """Invalid algorithm or campaign configuration."""


class DivergenceError(SgldVrError, ArithmeticError):
    """A trajectory produced a non-finite value."""

    def __init__(self, t: int, what: str):
        super().__init__(f"non-finite {what} at iteration t={t}")
        self.t = t
        self.what = what


class InfeasibleHyperparametersError(SgldVrError, ValueError):
    pass


class InconsistentConstantsError(SgldVrError, ArithmeticError):
    pass


class SizeLimitError(SgldVrError, ValueError):
    pass


class TraceParseError(SgldVrError, ValueError):
    """Malformed trace file. Carries the 1-based line and column."""

    def __init__(self, path, line: int, column: int, message: str):
        super().__init__(f"{path}:{line}:{column}: {message}")
        self.path = path
        self.line = line
        self.column = column
