"""Exception hierarchy.

Input-side problems derive from :class:`InputError`; numerical failures
derive from :class:`NumericalError`. The CLI maps the two branches to
exit codes 2 and 3.
"""


class DPMixError(Exception):
    """Base class for all package errors."""


class InputError(DPMixError, ValueError):
    """Invalid user input: files, schemas, configs, arguments."""


class ParameterDomainError(InputError):
    """Classical or natural parameters outside their legal domain."""


class SupportError(InputError):
    """Observation outside the support of a likelihood."""


class ShapeError(InputError):
    """Array with the wrong shape for a family or block."""


class ConfigError(InputError):
    pass


class SchemaError(InputError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ParseError(InputError):
    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        where = []
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        if where:
            message = f"{', '.join(where)}: {message}"
        super().__init__(message)


class UnsupportedSchemaError(InputError):
    """Operation not available for the model's feature layout."""


class EvaluationError(InputError):
    pass


class NumericalError(DPMixError, ArithmeticError):
    """Non-finite or otherwise unusable intermediate values."""


class ConditioningError(NumericalError):
    """Matrix could not be factorized even after jitter."""


class SamplingError(NumericalError):
    pass


class InternalConsistencyError(NumericalError):
    """The lower bound decreased: an update is inconsistent with the bound."""
