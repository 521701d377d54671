"""Exceptions raised by foldfinder. `exit_code` is what the CLI returns."""


class FoldFinderError(Exception):
    exit_code = 3


class UsageError(FoldFinderError):
    exit_code = 2


class NumericalError(FoldFinderError):
    exit_code = 3


# ---- core model ---- #


class DomainViolation(NumericalError):
    pass


class DegenerateWeight(NumericalError):
    pass


# ---- matrix analysis ---- #


class NotSignConstant(NumericalError):
    pass


class NoConvergence(NumericalError):
    pass


# ---- solver ---- #


class InfeasibleStart(NumericalError):
    pass


class IterationCap(NumericalError):
    pass


class DimensionTooLarge(NumericalError):
    pass


# ---- certificate ---- #


class EmptyActiveSet(NumericalError):
    pass


# ---- continuation ---- #


class CorrectorDivergence(NumericalError):
    pass


class StartInfeasible(NumericalError):
    pass


# ---- problems ---- #


class NotIrreducible(UsageError):
    pass


class NegativeEntry(UsageError):
    pass


class NonpositiveParameter(UsageError):
    pass


class BadExponent(UsageError):
    pass


class ProblemFileError(UsageError):
    pass


class DimensionMismatch(UsageError):
    pass


class InvalidDomain(UsageError):
    pass


class ParseError(UsageError):
    def __init__(self, message, line=1, column=1):
        super().__init__(f"{message} (line {line}, column {column})")
        self.line = line
        self.column = column


class UnknownIdentifier(ParseError):
    pass
