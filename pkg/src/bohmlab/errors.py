"""Exception hierarchy shared by all bohmlab modules."""

__all__ = [
    "BohmlabError",
    "ShapeError",
    "NumericalBlowupError",
    "ConvergenceError",
    "DegenerateDensityError",
    "OutOfDomainError",
    "NodeProximityError",
    "UndefinedRateError",
    "StiffnessError",
    "ResolutionError",
    "DomainViolationError",
    "StepSizeError",
    "FoliationError",
    "PropagationError",
    "ExperimentInvalidError",
    "TruncationError",
    "ConfigError",
]


class BohmlabError(Exception):
    """Base class for every error raised by bohmlab."""


class ShapeError(BohmlabError, ValueError):
    """Grids or arrays that must agree in shape do not."""


class NumericalBlowupError(BohmlabError, ArithmeticError):
    """A propagator produced non-finite amplitudes."""


class ConvergenceError(BohmlabError, RuntimeError):
    """An iterative or eigen solver did not converge."""


class DegenerateDensityError(BohmlabError, ValueError):
    """A density with zero total mass was asked to produce samples."""


class OutOfDomainError(BohmlabError, ValueError):
    """A query point lies outside the region where a field is defined."""


class NodeProximityError(BohmlabError, ArithmeticError):
    """The density at a configuration is below the node threshold."""


class UndefinedRateError(BohmlabError, ArithmeticError):
    """A jump rate was requested at a configuration of zero density."""


class StiffnessError(BohmlabError, RuntimeError):
    """Jump rates too large to resolve even at the smallest sub-step."""


class ResolutionError(BohmlabError, ValueError):
    """Too few grid points for the requested operation."""


class DomainViolationError(BohmlabError, ValueError):
    """An operator was applied to a state outside its domain."""


class StepSizeError(BohmlabError, ValueError):
    """A time step violates a stability bound."""


class FoliationError(BohmlabError, ValueError):
    """A leaf or foliation violates the spacelike/covering conditions."""


class PropagationError(BohmlabError, RuntimeError):
    """A wave-function provider could not supply the requested time."""


class ExperimentInvalidError(BohmlabError, RuntimeError):
    """Too many trajectories were excluded for the statistics to mean anything."""


class TruncationError(BohmlabError, RuntimeError):
    """Probability in the highest Fock sector exceeded the allowed budget."""


class ConfigError(BohmlabError, ValueError):
    """A scenario configuration failed validation."""
