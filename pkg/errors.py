"""Exception types shared by the simulator modules.

Messages start with a short snake_case reason code followed by details, for
example ``non_congruent: layer 1 shape (8, 4) != (8, 3)``.
"""

from __future__ import annotations

from typing import Optional


class FedsimError(Exception):
    """Base class for every error raised on purpose by the simulator."""


class ConfigError(FedsimError, ValueError):
    """Invalid configuration value or hyperparameter."""


class CongruenceError(FedsimError, ValueError):
    """Two parameter structures do not share layer ids, kinds and shapes."""


class NumericError(FedsimError, ArithmeticError):
    """An operation produced NaN or infinite values."""


class SchemaError(FedsimError, ValueError):
    """Input file does not follow the federation CSV schema."""

    def __init__(self, message: str, *, row: Optional[int] = None, column: Optional[str] = None) -> None:
        self.row = row
        self.column = column
        details = []
        if row is not None:
            details.append(f"row={row}")
        if column is not None:
            details.append(f"column={column}")
        suffix = f" ({', '.join(details)})" if details else ""
        super().__init__(f"{message}{suffix}")


class UndefinedMetricError(FedsimError, ValueError):
    """Metric is undefined for the given labels (e.g. AUROC with one class)."""
