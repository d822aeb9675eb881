"""
errors.py
---------
Exception hierarchy shared by every kmr module, plus the mapping the CLI
uses to turn a failure into a process exit code.
"""


class KmrError(Exception):
    """Base class for all failures raised by kmr."""

    exit_code = 1


class DomainError(KmrError, ValueError):
    """An argument lies outside the domain an operation is defined on."""


class ConfigError(KmrError):
    """A configuration file or flag combination is invalid."""

    exit_code = 2


class QuadratureError(KmrError):
    """An adaptive integral did not reach the requested tolerance."""

    def __init__(self, message: str, value: float = float("nan"), error: float = float("nan")):
        super().__init__(message)
        self.value = value
        self.error = error


class SizeGuardError(KmrError):
    """A computation was refused because it exceeds a configured size guard."""


class InfeasibleClusteringError(KmrError):
    """A clustering is not feasible for the k-median integer program."""


class SolverError(KmrError):
    """The LP solver failed numerically or hit its iteration limit."""


class RecipeInapplicableError(KmrError):
    """The dual-certificate recipe cannot be applied to an instance."""


def exit_code_for(exc: BaseException) -> int:
    """Exit code the CLI reports for an exception escaping a command."""
    if isinstance(exc, KmrError):
        return exc.exit_code
    return 1
