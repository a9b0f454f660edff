"""Exception types shared across the package."""

from __future__ import annotations


class ShapeError(ValueError):
    """Input dimensions do not match the architecture."""


class EmptyDataError(ValueError):
    """An operation that needs at least one sample got none."""


class TaskMismatchError(ValueError):
    """A classification-only metric was asked of a regression model (or vice versa)."""


class MomentDomainError(ValueError):
    """λ lies outside the domain where the closed-form moment bound is finite.

    Attributes
    ----------
    c : float
        The constraint constant ``2 n σ²_x σ²_π``.
    lambda_max : float
        Supremum of admissible λ for the moment form that raised.
    """

    def __init__(self, lam: float, c: float, lambda_max: float):
        self.lam = lam
        self.c = c
        self.lambda_max = lambda_max
        super().__init__(
            f"lambda={lam!r} outside closed-form moment domain (0, {lambda_max!r}); c={c!r}"
        )


class TrainingDivergedError(RuntimeError):
    def __init__(self, epoch: int):
        self.epoch = epoch
        super().__init__(f"training loss became non-finite in epoch {epoch}")


class DataError(ValueError):
    """Problem while ingesting or splitting a dataset."""


class InsufficientDataError(DataError):
    def __init__(self, required: int, available: int):
        self.required = required
        self.available = available
        super().__init__(f"split needs {required} samples but only {available} are available")


class ConfigError(ValueError):
    """Malformed or inconsistent run configuration."""
