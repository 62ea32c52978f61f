"""Exception hierarchy shared by the core modules."""


class FedHuberError(Exception):
    """Base class for every error raised by fedhuber"""


class DomainError(FedHuberError, ValueError):
    """Input outside the domain of a function (non-finite values)"""


class ShapeError(FedHuberError, ValueError):
    """Array dimensions do not agree"""


class ParameterError(FedHuberError, ValueError):
    """Invalid argument value"""


class DivergenceError(FedHuberError, ArithmeticError):
    """Iterative fit blew up"""

    def __init__(self, message, eta=None):
        super().__init__(message)
        self.eta = eta


class NumericError(FedHuberError, ArithmeticError):
    """Non-finite state inside a solver"""


class ProtocolError(FedHuberError):
    """Missing or duplicated federated message"""


class IngestionError(FedHuberError, ValueError):
    """Malformed input file"""

    def __init__(self, message, path=None, line=None):
        super().__init__(message)
        self.path = path
        self.line = line


class TuningError(FedHuberError):
    """Hyperparameter selection failed"""


class UsageError(FedHuberError, ValueError):
    """Invalid experiment specification or command line"""
