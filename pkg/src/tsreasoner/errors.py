"""Exception hierarchy.

Every operator failure is an :class:`OpError`; its ``code`` is the class name
unless overridden, and is what the executor reports back to the decomposer.
"""

from __future__ import annotations


class TSReasonerError(Exception):
    """Base class for all package errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


class OpError(TSReasonerError):
    """An operator precondition or numerical failure."""


class LengthMismatch(OpError):
    pass


class ShapeMismatch(OpError):
    pass


class ZeroDenominator(OpError):
    pass


class DomainError(OpError):
    pass


class EmptyAfterDiff(OpError):
    pass


class DuplicateColumn(OpError):
    pass


class LagTooLarge(OpError):
    pass


class ConstantSeries(OpError):
    pass


class SeriesTooShort(OpError):
    pass


class WindowTooLarge(OpError):
    pass


class MissingSecondSeries(OpError):
    pass


class BothOrNeitherGiven(OpError):
    pass


class SingularRegression(OpError):
    pass


class HistoryTooShort(OpError):
    pass


class UnknownModel(OpError):
    pass


class AmbiguousConstraint(OpError):
    pass


class MissingAnchor(OpError):
    pass


class InfeasibleConstraint(OpError):
    pass


class TypeMismatch(OpError):
    pass


class InvalidValue(OpError):
    """Value-level invariant violated (non-finite data, bad BinVec, ...)."""


class PlanSyntaxError(TSReasonerError):
    """Plan text does not match the grammar."""

    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column
        self.detail = message

    @property
    def code(self) -> str:
        return "SyntaxError"


# benchgen / cli / evaluator


class InfeasibleSample(TSReasonerError):
    pass


class CyclicRelation(TSReasonerError):
    pass


class MissingPlaceholder(TSReasonerError):
    def __init__(self, name: str):
        super().__init__(f"template placeholder {{{name}}} is not bound")
        self.name = name


class EmptyResults(TSReasonerError):
    pass


class DatasetNotFound(TSReasonerError):
    pass


class UnknownTaskKind(TSReasonerError):
    pass


# retrieval


class RetrievalError(OpError):
    pass


class NetworkDisabledNoFixture(RetrievalError):
    pass


class UpstreamError(RetrievalError):
    def __init__(self, status: int, message: str = ""):
        super().__init__(f"upstream returned HTTP {status}" + (f": {message}" if message else ""))
        self.status = status


class EmptyRange(RetrievalError):
    pass


class UnknownZone(RetrievalError):
    pass


class NetworkBlocked(RetrievalError):
    """Raised by the offline test transport on any attempted request."""


# llm endpoint


class EndpointError(TSReasonerError):
    pass


class EndpointUnreachable(EndpointError):
    pass


class NoCodeBlockInResponse(EndpointError):
    pass


class AuthMissing(EndpointError):
    pass
