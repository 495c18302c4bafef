"""Exception hierarchy shared across the package."""

from __future__ import annotations


class FrontierPoolError(Exception):
    """Base class for all package errors."""


class CapacityExceeded(FrontierPoolError):
    pass


class NotCold(FrontierPoolError):
    pass


class InsufficientItems(FrontierPoolError):
    def __init__(self, requested: int, available: int) -> None:
        super().__init__(f"requested {requested} records, only {available} samplable")
        self.requested = requested
        self.available = available


class LayoutError(FrontierPoolError, ValueError):
    pass


class SnapshotError(FrontierPoolError, ValueError):
    def __init__(self, line_no: int, message: str) -> None:
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class DuplicateEdge(FrontierPoolError):
    pass


class SelfLoop(FrontierPoolError):
    pass


class NoScoredChildren(FrontierPoolError):
    pass


class CycleInSubtree(FrontierPoolError):
    pass


class ContractViolation(FrontierPoolError):
    pass


class BadReward(FrontierPoolError, ValueError):
    pass


class DegenerateLikelihood(FrontierPoolError, ValueError):
    pass


class EmptyProblem(FrontierPoolError, ValueError):
    pass


class NonNumeric(FrontierPoolError, ValueError):
    pass


class ConfigInvalid(FrontierPoolError, ValueError):
    def __init__(self, field: str, message: str) -> None:
        super().__init__(f"{field}: {message}")
        self.field = field
