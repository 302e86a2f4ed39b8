"""Exception types shared across the package."""


class PriorSRError(Exception):
    """Base class for all package errors."""


class ConfigurationError(PriorSRError):
    """Invalid configuration value or violated divisibility constraint."""


class ShapeMismatchError(PriorSRError):
    """Array shapes are inconsistent with each other or with the manifest."""


class TrainingDiverged(PriorSRError):
    """Loss became non-finite; carries the offending batch ids in the message."""
