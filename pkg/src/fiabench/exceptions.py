"""Exception hierarchy shared across the package."""


class FiaBenchError(Exception):
    """Base class for all errors raised by fiabench."""


class ContractViolationError(FiaBenchError, ValueError):
    """Inputs break a shape, range or consistency precondition."""


class ParameterError(FiaBenchError, ValueError):
    """A hyperparameter is outside its legal range."""


class ConfigError(FiaBenchError, ValueError):
    """An attack or experiment configuration is not self-consistent."""


class TapLookupError(FiaBenchError, KeyError):
    """A feature tap or registered loss name does not exist."""

    def __str__(self):
        # KeyError quotes its argument; keep messages readable
        return str(self.args[0]) if self.args else ""


class CapabilityError(FiaBenchError, RuntimeError):
    """The model cannot provide the requested gradient."""


class DegenerateGradientError(FiaBenchError, ArithmeticError):
    """An aggregate gradient summed to exactly zero and cannot be normalized."""


class ZeroGradientError(FiaBenchError, ArithmeticError):
    """An input gradient has zero l1 norm, so the momentum update is undefined."""


class TrainingFailureError(FiaBenchError, RuntimeError):
    """A trained model did not reach its configured accuracy floor."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class UndefinedRateError(FiaBenchError, ArithmeticError):
    """A success rate was requested over an empty denominator."""
