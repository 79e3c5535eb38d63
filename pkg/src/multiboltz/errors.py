"""Exception hierarchy shared by all multiboltz modules."""


class MultiboltzError(Exception):
    """Base class for all domain errors raised by this package."""

    code = "error"


class GrammarSyntaxError(MultiboltzError):
    code = "syntax"

    def __init__(self, message, line=None, column=None):
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)
        self.line = line
        self.column = column


class UndefinedNonterminalError(MultiboltzError):
    code = "undefined-nonterminal"


class DuplicateDefinitionError(MultiboltzError):
    code = "duplicate-definition"


class NotWellFoundedError(MultiboltzError):
    code = "not-well-founded"


class PointedEmptyError(MultiboltzError):
    """Pointing a grammar whose language is {epsilon} yields an empty class."""

    code = "pointed-empty"


class DivergentError(MultiboltzError):
    """Evaluation point lies outside the convergence domain."""

    code = "divergent"


class IterationLimitError(MultiboltzError):
    code = "iteration-limit"


class SingularJacobianError(MultiboltzError):
    code = "singular-jacobian"


class UnreachableError(MultiboltzError):
    """No parameter value attains the requested expected size."""

    code = "unreachable"


class LeftDomainError(MultiboltzError):
    """A tuning iterate left the convergence domain and could not recover."""

    code = "left-domain"


class StepLimitError(MultiboltzError):
    code = "step-limit"


class TrialLimitError(MultiboltzError):
    code = "trial-limit"


class NumericalInconsistencyError(MultiboltzError):
    code = "numerical-inconsistency"


class DegenerateCovarianceError(MultiboltzError):
    code = "degenerate-covariance"


class ProfileMismatchError(MultiboltzError):
    code = "profile-mismatch"


class TooManyWordsError(MultiboltzError):
    code = "too-many-words"


class WidthOutOfRangeError(MultiboltzError):
    code = "width-out-of-range"


class CycleDetectedError(MultiboltzError):
    """Dependency graph of a tessellation has a cycle; internal consistency failure."""

    code = "cycle-detected"
