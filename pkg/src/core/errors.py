"""
Error hierarchy shared by every symmetry-lab module.

All domain failures derive from ``SymmetryLabError`` so callers (and the CLI) can
separate them from programming errors.
"""


class SymmetryLabError(ValueError):
    """Base class for domain errors."""


class DimensionError(SymmetryLabError):
    """A quantity carries the wrong Dimension, or Dimensions use different base units."""


class InfeasibleError(SymmetryLabError):
    """No dimensionally valid combination of the inputs reaches the target."""


class MixedDimsError(SymmetryLabError):
    """Summands with different Dimensions were combined."""


class SchemaMismatchError(SymmetryLabError):
    """Data, pipeline or model does not match the declared feature schema."""


class EmptyClassError(SymmetryLabError):
    """A units class or feature has no samples to fit statistics on."""


class NonFiniteError(SymmetryLabError):
    """Training produced a NaN or infinite loss."""


class WidthMismatchError(SymmetryLabError):
    """Input width does not match the network's first layer."""


class SingularityError(SymmetryLabError):
    """Two pendulum points coincide, the force field is undefined there."""


class ConfigError(SymmetryLabError):
    """Configuration file or profile is malformed."""
