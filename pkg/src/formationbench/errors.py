"""Exception hierarchy shared by all formationbench modules.

Validation-type errors (bad inputs, infeasible configs, out-of-range queries)
derive from :class:`ValidationError`; the CLI maps those to exit code 2 and
everything else to exit code 1.
"""


class FormationBenchError(Exception):
    """Base class for all package errors."""


class ValidationError(FormationBenchError, ValueError):
    """Input or configuration rejected before any computation ran."""


class SchemaError(ValidationError):
    """A delimited file is missing a required column or holds unparseable cells."""


class IntegrityError(ValidationError):
    """Loaded records violate a structural invariant (for example time order)."""


class EmptyInputError(ValidationError):
    """An operation that needs records received none."""


class InsufficientDataError(ValidationError):
    """Too few records for the requested computation."""


class DomainError(ValidationError):
    """A query or state left the mathematically valid domain."""


class SpanError(ValidationError):
    """A curve does not cover the requested evaluation range."""


class ExtrapolationError(ValidationError):
    """A query fell outside the measured span and extrapolation is refused."""


class ConfigError(ValidationError):
    """A configuration value violates an operation's preconditions."""


class FeatureError(ValidationError):
    """A required protocol step is absent from the series."""


class ConsistencyError(ValidationError):
    """Two inputs that must share a reference (for example curves) do not."""


class BoundaryError(DomainError):
    """Evaluation exactly on a singular boundary of the model."""


class DegenerateInstrumentError(DomainError):
    """Instrument error band swallows the signal it is supposed to resolve."""


class UndefinedCorrelationError(DomainError):
    """Correlation requested on a sample with zero variance."""


class ConvergenceError(FormationBenchError):
    """An iterative solver exhausted its budget.

    Carries the best solution found so far in ``best`` (may be None).
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best
