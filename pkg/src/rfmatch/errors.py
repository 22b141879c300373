"""Typed errors shared across the toolkit.

Singular configurations raise instead of returning sentinel values so that
optimizers can catch and penalize them explicitly.
"""


class RfMatchError(Exception):
    """Base class for all toolkit errors."""


class SingularNetworkError(RfMatchError):
    """A network-algebra operation hit a singular configuration."""


class UnrecoverableLoadError(RfMatchError):
    """Load reflection cannot be recovered from the given input reflection."""


class SingularTopologyError(RfMatchError):
    """Circuit evaluation is singular at the requested operating state."""


class NoFeasibleSolutionError(RfMatchError):
    """The closed-form L-network match has no positive-capacitor solution."""


class CircuitSpecError(RfMatchError):
    """Circuit spec file violates the documented schema."""


class ModelFormatError(RfMatchError):
    """Model file is corrupt, truncated, or has an unsupported format version."""


class ModelPairingError(RfMatchError):
    """Inverse solver paired with a different surrogate than it was trained on."""


class DegenerateNormalizationError(RfMatchError):
    """A feature is constant; min-max normalization is undefined."""
