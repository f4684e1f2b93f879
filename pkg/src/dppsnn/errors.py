"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class ContractViolation(RuntimeError):
    """An intensity model broke its declared contract (e.g. exceeded its upper bound)."""
