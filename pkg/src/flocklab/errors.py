"""Exception types raised across flocklab."""


class FlocklabError(Exception):
    pass


class DomainError(FlocklabError, ValueError):
    """An argument lies outside the domain of a function (e.g. NaN radius)."""


class UnsupportedError(FlocklabError, ValueError):
    """The operation is not defined for this dimension, exponent or family."""


class HypothesisError(FlocklabError, ValueError):
    """The hypothesis under which a bound holds is violated by the inputs."""


class BlowUpError(FlocklabError, ArithmeticError):
    """The integrated state stopped being finite."""

    def __init__(self, message, step=None, t=None):
        super().__init__(message)
        self.step = step
        self.t = t


class ConfigError(FlocklabError, ValueError):
    """Invalid configuration; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))
