"""Exception hierarchy shared by every module."""


class TadsieError(Exception):
    """Base class for errors raised by this package."""


class InsufficientDataError(TadsieError, ValueError):
    """Too few observations for the requested statistic."""


class DegenerateStatisticError(TadsieError, ArithmeticError):
    """A test statistic is undefined (zero sample variance)."""


class RecruitmentError(TadsieError):
    """A subject source cannot supply the requested subjects."""


class DatasetParseError(TadsieError, ValueError):
    """Malformed cohort CSV or metadata sidecar."""

    def __init__(self, message, line=None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class ConfigError(TadsieError, ValueError):
    """Invalid configuration value or unknown option."""


class TrialError(TadsieError):
    """A simulated trial failed; ``trial_index`` identifies which one."""

    def __init__(self, trial_index: int, cause: BaseException):
        self.trial_index = trial_index
        self.cause = cause
        super().__init__(f"trial {trial_index} failed: {type(cause).__name__}: {cause}")

    def __reduce__(self):
        return (type(self), (self.trial_index, self.cause))
