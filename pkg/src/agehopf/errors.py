"""Exception hierarchy shared by all modules."""


class AgeHopfError(Exception):
    """Base class for every error raised by the package."""


class DomainError(AgeHopfError, ValueError):
    """An argument lies outside the domain where the quantity is defined."""


class NoSolutionError(AgeHopfError):
    """A bracketing solve has no root in the admissible range."""


class NormalizationError(AgeHopfError):
    """A kernel violates the unit-mass normalization in ``assert`` mode."""


class NoEquilibriumError(AgeHopfError):
    """Newton iteration for the constant solution failed to converge."""


class FoldPointError(AgeHopfError):
    """The equilibrium branch is not a graph over the parameter (1 - f_w = 0)."""


class StepSizeError(AgeHopfError):
    """The implicit lag-0 update of the renewal solver is not a contraction."""


class DegeneracyError(AgeHopfError):
    """The Jacobian of the blown-up periodic-orbit system is singular."""


class ConvergenceError(AgeHopfError):
    """A Newton-type iteration did not reach its tolerance."""


class ScenarioError(AgeHopfError):
    """A scenario file could not be parsed or failed validation.

    ``key`` names the offending dotted key; ``line``/``column`` locate parse errors.
    """

    def __init__(self, message, key=None, line=None, column=None):
        super().__init__(message)
        self.key = key
        self.line = line
        self.column = column
