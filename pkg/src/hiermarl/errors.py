"""Exception types shared across the package."""


class HiermarlError(Exception):
    """Base class for all package errors."""


class ConfigError(HiermarlError):
    """Invalid or inconsistent configuration."""


class ConnectivityError(HiermarlError):
    """Down-lists do not partition the level below."""


class DimensionError(HiermarlError):
    """Mismatched vector widths or component counts."""


class ProtocolError(HiermarlError):
    """Interface called out of order (e.g. step before reset)."""


class RangeError(HiermarlError):
    """Discrete index outside its declared range."""


class TraceError(HiermarlError):
    """Trace is missing required agents or columns."""


class CheckpointError(HiermarlError):
    """Checkpoint file corrupt or incompatible with the model."""
