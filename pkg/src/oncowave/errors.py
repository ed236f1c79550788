class OncowaveError(Exception):
    """Base class for all toolkit errors."""


class InvalidParameterError(OncowaveError, ValueError):
    pass


class DomainError(OncowaveError, ValueError):
    """An argument lies outside the domain of the function (e.g. rho <= 0)."""


class SingularDirectionError(OncowaveError, ArithmeticError):
    """An eigenvector denominator vanishes."""


class NoAdmissibleRhoError(OncowaveError, ValueError):
    pass


class ConstructionError(OncowaveError, ValueError):
    """An upper/lower solution cannot be built; the message names the violated inequality."""


class FoggyRegimeError(ConstructionError):
    """Requested decay rate falls in the undecided interval (rho_*, rho_m) of case 4."""


class ResidualViolation(OncowaveError, AssertionError):
    def __init__(self, message, xi=None, component=None, value=None):
        super().__init__(message)
        self.xi = xi
        self.component = component
        self.value = value


class SandwichError(OncowaveError, ValueError):
    """A profile leaves the region between lower and upper solutions."""


class SimulationError(OncowaveError, RuntimeError):
    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


class TruncatedDomainError(OncowaveError, RuntimeError):
    pass


class ConfigError(OncowaveError, ValueError):
    pass
