"""Exception hierarchy shared by all rstensor modules.

The CLI maps these onto process exit codes: configuration and domain
problems exit with 2, numerical failures with 3, capacity limits with 4.
"""


class RsTensorError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(RsTensorError):
    """Invalid configuration, arguments, or input files."""


class ParseError(ConfigError):
    """Malformed input file; message carries the offending line number."""


class DomainError(RsTensorError):
    """A value lies outside the mathematical domain of an operation."""


class CapabilityError(RsTensorError):
    """Requested feature or kernel kind is not supported."""


class ResolutionError(RsTensorError):
    """The grid is too coarse to resolve the particle system."""


class SeparationError(RsTensorError):
    """Particle separation violates a strict support-disjointness policy."""


class NumericalError(RsTensorError):
    """A numerical computation failed (factorization, iteration, ...)."""


class SolverError(NumericalError):
    """Iterative solver failure, e.g. loss of positive definiteness."""


class SingularityError(NumericalError):
    """Evaluation at a singular configuration (coincident particles)."""


class CapacityError(RsTensorError):
    """A size or memory budget would be exceeded."""


class PackingError(CapacityError):
    """Rejection sampling could not place the requested points."""
