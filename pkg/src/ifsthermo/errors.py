"""Exception hierarchy shared by all ifsthermo modules."""


class IfsThermoError(Exception):
    """Base class; the CLI maps subclasses to exit codes."""


class InvalidInputError(IfsThermoError, ValueError):
    pass


class ResourceError(IfsThermoError):
    """A configured size cap (grid points, words, atoms) would be exceeded."""


class UnsupportedBranchStructureError(IfsThermoError):
    """Two maps coincide on a continuum, so the finite branch condition fails."""


class NotInCographError(IfsThermoError, ValueError):
    pass


class InvalidPotentialError(IfsThermoError, ValueError):
    pass


class PotentialNotAboveOneError(InvalidPotentialError):
    pass


class CompatibilityError(InvalidPotentialError):
    pass


class GridResolutionError(IfsThermoError):
    """A lookup point lies farther from the grid than its code-map error bound."""


class ConvergenceError(IfsThermoError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class NumericalInstabilityError(IfsThermoError):
    pass


class RegimeError(IfsThermoError):
    pass


class InconsistencyError(IfsThermoError):
    pass
