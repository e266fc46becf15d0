"""Exception types shared across the package."""


class ExtremePanelError(Exception):
    """Base class for every error raised by this package."""


class DomainError(ExtremePanelError, ValueError):
    """Numeric input outside the mathematical domain of an operation."""


class ConfigError(ExtremePanelError, ValueError):
    """Mismatched dimensions, unknown columns, or an invalid configuration."""


class UnderdeterminedError(ExtremePanelError):
    """Too few observations to identify the requested coefficients."""


class FitError(ExtremePanelError):
    """Optimization failed to produce a feasible fit."""

    def __init__(self, message, chain_traces=None):
        super().__init__(message)
        self.chain_traces = list(chain_traces) if chain_traces else []


class NumericalRankError(ExtremePanelError):
    """A matrix required for inference is numerically singular."""

    def __init__(self, message, condition_number=float("inf")):
        super().__init__(f"{message} (condition number {condition_number:.3e})")
        self.condition_number = condition_number


class ParseError(ExtremePanelError, ValueError):
    """Malformed input file; carries the 1-based row number when known."""

    def __init__(self, message, row=None):
        if row is not None:
            message = f"row {row}: {message}"
        super().__init__(message)
        self.row = row
