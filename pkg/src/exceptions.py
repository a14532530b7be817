"""
Error hierarchy for the variable selection pipeline.

Every error carries the process exit code the CLI reports for it:
2 for validation problems (bad flags, bad data, contract violations),
3 for numerical failures (singular designs, quadrature that does not converge).
"""

from typing import Any, Dict, Optional, Tuple


EXIT_VALIDATION = 2
EXIT_NUMERICAL = 3


class LossPriorError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 1

    def __init__(self, message: str, **context: Any):
        super().__init__(message)
        self.message = message
        self.context: Dict[str, Any] = dict(context)

    def add_context(self, **context: Any) -> "LossPriorError":
        """Attach extra context (model, replicate index, flag) and return self for re-raising."""
        self.context.update(context)
        return self

    def __str__(self) -> str:
        if not self.context:
            return self.message
        details = ", ".join(f"{key}={value}" for key, value in self.context.items())
        return f"{self.message} [{details}]"


# Validation family

class ValidationError(LossPriorError):
    exit_code = EXIT_VALIDATION


class CapacityError(ValidationError):
    """Requested model space exceeds the enumeration cap."""


class DomainError(ValidationError, ValueError):
    """Argument outside the mathematical domain of a function."""


class ContractError(ValidationError):
    """Inputs violate a documented precondition."""


class DataError(ValidationError):
    """Base class for dataset loading problems."""


class MissingHeaderError(DataError):
    pass


class DuplicateHeaderError(DataError):
    pass


class CellParseError(DataError):
    def __init__(self, message: str, row: int, column: str):
        super().__init__(message, row=row, column=column)
        self.row = row
        self.column = column


class NonPositiveValueError(DataError):
    pass


class RankDeficiencyError(DataError):
    pass


class IntegrityError(DataError):
    """Packaged data file is missing or does not match the manifest."""


# Numerical family

class NumericalError(LossPriorError):
    exit_code = EXIT_NUMERICAL


class SingularDesignError(NumericalError):
    def __init__(self, message: str, gamma: Optional[Any] = None, **context: Any):
        if gamma is not None:
            context.setdefault("gamma", gamma)
        super().__init__(message, **context)
        self.gamma = gamma


class DegenerateResponseError(NumericalError):
    pass


class PerfectFitError(NumericalError):
    """R^2 = 1 makes the Bayes factor against the null model unbounded."""


class QuadratureError(NumericalError):
    def __init__(self, message: str, estimates: Tuple[float, float], **context: Any):
        super().__init__(message, estimates=estimates, **context)
        self.estimates = estimates
