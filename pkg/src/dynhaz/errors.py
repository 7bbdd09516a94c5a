"""Exception types shared across the package."""

from __future__ import annotations


class DynhazError(Exception):
    """Base class for all errors raised by dynhaz."""


class DataValidationError(DynhazError):
    """A dataset violated its schema or invariants.

    Carries the full list of violations so a complete report can be shown
    instead of failing on the first problem.
    """

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__(self.report())

    def report(self) -> str:
        lines = ["dataset validation failed:"]
        for subject_id, message in self.violations:
            where = f"subject {subject_id}" if subject_id is not None else "schema"
            lines.append(f"  {where}: {message}")
        return "\n".join(lines)


class EmptyRiskSetError(DynhazError):
    """No subject is at risk for a requested training table."""


class MissingModelError(DynhazError):
    """A bundle was queried at a key whose model could not be fitted."""


class SeparationError(DynhazError):
    """Logistic fit diverged (complete or quasi-complete separation)."""


class ConvergenceError(DynhazError):
    """Iterative fit failed to converge within the iteration budget."""


class RankDeficientError(DynhazError):
    """Design matrix does not have full column rank."""
