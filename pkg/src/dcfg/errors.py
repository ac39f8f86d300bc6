"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class DcfgError(Exception):
    """Base class for all library errors."""


class InputError(DcfgError):
    """Bad user-provided data (maps to CLI exit code 2)."""


class SolverError(DcfgError):
    """Numerical or inference failure (maps to CLI exit code 1)."""

    def __init__(self, message: str, iteration: int | None = None):
        super().__init__(message)
        self.iteration = iteration

    def with_iteration(self, iteration: int) -> "SolverError":
        self.iteration = iteration
        self.args = (f"{self.args[0]} (outer iteration {iteration})",)
        return self


# graph-core
class DuplicateKey(InputError):
    pass


class UnknownKey(InputError):
    def __init__(self, key_id: int):
        super().__init__(f"unknown variable id {key_id}")
        self.key_id = key_id


class MissingAssignment(InputError):
    def __init__(self, key_id: int):
        super().__init__(f"no value assigned to variable id {key_id}")
        self.key_id = key_id


class NonPositiveDensity(SolverError):
    pass


# manifold
class DimensionMismatch(InputError):
    pass


class NotOnManifold(InputError):
    pass


# discrete-infer
class EmptySupport(SolverError):
    pass


class TreewidthExceeded(SolverError):
    pass


# continuous-solver
class SingularSystem(SolverError):
    pass


# problems
class EmptyCloud(InputError):
    pass


class DisconnectedGraph(InputError):
    pass


class InsufficientPoses(InputError):
    pass


class MissingLabel(InputError):
    pass


# io
class ParseError(InputError):
    """Structured parse failure carrying a 1-based line and column."""

    def __init__(self, line: int, reason: str, column: int | None = None):
        where = f"line {line}" if column is None else f"line {line}, column {column}"
        super().__init__(f"{where}: {reason}")
        self.line = line
        self.column = column
        self.reason = reason


class MalformedRecord(ParseError):
    pass


class NonFiniteNumber(ParseError):
    pass


class UnnormalizedQuaternion(ParseError):
    pass
