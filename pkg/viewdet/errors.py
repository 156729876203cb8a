import enum
import typing

from marshmallow.exceptions import ValidationError


class ErrorCode(enum.Enum):
    ARITY_MISMATCH = "ARITY_MISMATCH"
    UNSAFE_RULE = "UNSAFE_RULE"
    UNSUPPORTED_CLASS = "UNSUPPORTED_CLASS"
    SATURATION_BUDGET = "SATURATION_BUDGET"
    NON_BOOLEAN_QUERY = "NON_BOOLEAN_QUERY"
    NOT_FRONTIER_GUARDED = "NOT_FRONTIER_GUARDED"
    DATALOG_VIEW_UNEXPANDABLE = "DATALOG_VIEW_UNEXPANDABLE"
    DATALOG_VIEW_HERE = "DATALOG_VIEW_HERE"
    NON_CQ_VIEW = "NON_CQ_VIEW"
    NON_FULL_SIGMA = "NON_FULL_SIGMA"
    FANOUT_LIMIT = "FANOUT_LIMIT"
    SCHEMA_TOO_LARGE = "SCHEMA_TOO_LARGE"
    INCOHERENT = "INCOHERENT"
    WIDTH_EXCEEDED = "WIDTH_EXCEEDED"
    INVALID_DECOMPOSITION = "INVALID_DECOMPOSITION"
    ALPHABET_MISMATCH = "ALPHABET_MISMATCH"
    NONDETERMINISTIC_SPEC = "NONDETERMINISTIC_SPEC"
    EMPTY_TILESET = "EMPTY_TILESET"
    PARSE_ERROR = "PARSE_ERROR"
    UNDECLARED_PREDICATE = "UNDECLARED_PREDICATE"


class ViewdetError(ValidationError):
    """A domain error carrying an ErrorCode and optional details

    Details are free-form keyword values such as the violated coherence
    condition, the index of an offending rule or a source position.
    """

    def __init__(self, code: ErrorCode, message: str, **details: typing.Any):
        super().__init__(message)
        self.code = code
        self.details = details

    def __str__(self):
        return f"{self.code.value}: {self.messages[0]}"
