"""Exception hierarchy shared across the toolkit."""


class DmriqcError(Exception):
    """Base class for all toolkit errors."""


class LoadError(DmriqcError):
    """A volume file is missing, malformed, or contains non-finite voxels."""


class EmptyExtentError(DmriqcError):
    """Brain-extent computation found no foreground voxels."""


class EmptyResultError(DmriqcError):
    """Slice extraction produced no slices (trims exhausted the bounding box)."""


class SimulationError(DmriqcError):
    """Invalid artifact-injection parameters."""


class ViewMismatchError(DmriqcError):
    """A slice was routed to a detector trained for the other view."""


class TrainingError(DmriqcError):
    """Training could not proceed (degenerate labels, NaN loss, ...)."""


class ModelFormatError(DmriqcError):
    """A saved model or backbone asset failed a version or digest check."""


class LeakageError(DmriqcError):
    """Train and test sets share samples or dataset ids."""


class ConfigError(DmriqcError):
    """An experiment configuration is invalid (unknown keys, bad values)."""
