# core/errors.py

from typing import Optional


class TrialParseError(ValueError):
    """A trial record line could not be decoded."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class TupleConstraintError(ValueError):
    """A function-tuple constructor or combinator precondition was violated."""

    def __init__(self, op: str, message: str):
        self.op = op
        super().__init__(f"{op}: {message}")


class MatchingError(ValueError):
    """Matching is crossing, not one-to-one, or out of range."""


class OracleSizeError(ValueError):
    """Exhaustive local-realistic enumeration would exceed the size limit."""

    def __init__(self, size: int, limit: int):
        self.size = size
        self.limit = limit
        super().__init__(f"LR oracle needs {size} evaluations, limit is {limit}")


class TruncationError(ValueError):
    """Truncation parameters cannot be chosen from the training data."""


class TrainingError(ValueError):
    """Training data is insufficient for the requested optimization."""

    def __init__(self, message: str, setting: Optional[str] = None):
        self.setting = setting
        super().__init__(message)


class InfeasibleError(RuntimeError):
    """A linear program or calibration search has no feasible solution."""

    def __init__(self, message: str, constraint: Optional[str] = None):
        self.constraint = constraint
        super().__init__(message if constraint is None else f"{message} (constraint {constraint})")


class InvariantBreachError(RuntimeError):
    """A test factor took a negative value on observed data."""

    def __init__(self, candidate: int, value: float):
        self.candidate = candidate
        self.value = value
        super().__init__(f"test factor candidate {candidate} is negative ({value:g})")
