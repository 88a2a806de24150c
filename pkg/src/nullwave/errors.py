"""Exception hierarchy shared by all modules.

Every error carries an ``exit_code`` so the command line layer can map
failures onto process exit codes without knowing where they came from.
"""

from __future__ import annotations


class NullwaveError(Exception):
    """Base class for all package errors."""

    exit_code = 1
    module = "nullwave"

    def __str__(self) -> str:
        return f"[{self.module}] {super().__str__()}"


class ConfigError(NullwaveError, ValueError):
    """Invalid or unknown configuration value."""

    exit_code = 4
    module = "cli"


class NullConditionError(NullwaveError, ValueError):
    """A tensor violates the null condition where one is required."""

    module = "tensors"


class SupportMarginError(NullwaveError):
    """Field support too close to the periodic boundary for weighted diagnostics."""

    exit_code = 4
    module = "fields"

    def __init__(self, r_support: float, limit: float, what: str = ""):
        self.r_support = float(r_support)
        self.limit = float(limit)
        msg = f"support radius {r_support:.6g} exceeds limit {limit:.6g}"
        if what:
            msg += f" ({what})"
        super().__init__(msg)


class HyperbolicityError(NullwaveError):
    """The coefficient of the second time derivative fell below threshold."""

    exit_code = 2
    module = "solver"

    def __init__(self, margin: float, index: tuple, threshold: float, t: float | None = None):
        self.margin = float(margin)
        self.index = tuple(int(i) for i in index)
        self.threshold = float(threshold)
        self.t = t
        where = f" at t={t:.6g}" if t is not None else ""
        super().__init__(
            f"hyperbolicity margin {margin:.6g} < {threshold:g} at grid point {self.index}{where}"
        )


class NaNError(NullwaveError, FloatingPointError):
    """Non-finite values appeared in the evolved state."""

    exit_code = 3
    module = "solver"


class DiagnosticError(NullwaveError, ValueError):
    """A diagnostic was requested outside its domain (too few samples etc.)."""

    module = "diagnostics"
