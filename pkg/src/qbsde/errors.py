"""Exception hierarchy shared by the solvers, monitors and the CLI."""


class QbsdeError(Exception):
    """Base class for all errors raised by this package."""


class PreconditionError(QbsdeError, ValueError):
    """An argument violates an operation's documented precondition."""


class CoefficientEvaluationError(QbsdeError):
    """A coefficient returned a non-finite value inside the requested domain."""


class SimulationBlowupError(QbsdeError):
    """A simulated state became non-finite.

    ``path`` and ``step`` identify the first offending entry.
    """

    def __init__(self, message, path=None, step=None):
        super().__init__(message)
        self.path = path
        self.step = step


class IllConditionedBasisError(QbsdeError):
    """Least-squares design matrix is rank deficient."""

    def __init__(self, message, condition_number=float("inf"), step=None):
        super().__init__(message)
        self.condition_number = condition_number
        self.step = step


class TerminalOverflowError(QbsdeError):
    """The transformed terminal value is not finite."""


class StepDivergenceError(QbsdeError):
    """Picard iteration failed to contract at a backward step."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class OracleFailureError(QbsdeError):
    """A quadrature oracle did not converge at its maximal order."""


class InvalidComparisonError(QbsdeError):
    """Ordering hypotheses of a comparison experiment do not hold."""


class ConfigError(QbsdeError):
    """Scenario configuration failed schema validation.

    ``key`` is the dotted path to the offending entry.
    """

    def __init__(self, message, key=None):
        super().__init__(f"{key}: {message}" if key else message)
        self.key = key
