"""Exception hierarchy shared across the package.

Plain ``ValueError`` is used for bad scalar arguments to the physics
functions; the classes below mark failures the CLI maps to distinct exit
codes.
"""


class WgmError(Exception):
    """Base class for pipeline errors."""


class ConfigError(WgmError):
    """Invalid run configuration or on-disk artifact schema (CLI exit 2)."""


class AnalysisError(WgmError):
    """Spectrum analysis could not produce a usable result (CLI exit 4)."""


class UnrecognizableMultipletError(AnalysisError):
    """Detected lines are not an approximately equally spaced multiplet."""


class InsufficientLinesError(AnalysisError):
    """Too few lines to apply the missing-line identification rule."""


class QuadratureError(WgmError):
    """Overlap integral failed its panel-doubling convergence check."""


class FitDegenerateError(WgmError):
    """Least-squares normal equations are singular; names the parameter."""

    def __init__(self, parameter: str, message: str | None = None):
        self.parameter = parameter
        super().__init__(message or f"unidentifiable fit parameter: {parameter}")
