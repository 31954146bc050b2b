"""Exception types raised across the pipeline."""


class SeatbeltError(Exception):
    """Base class for all package errors."""


class ParameterError(SeatbeltError, ValueError):
    """A parameter set violates its invariants."""


class GeometryError(SeatbeltError, ValueError):
    """Degenerate or invalid geometric input."""


class BehindCameraError(GeometryError):
    """A 3D point projects from behind the camera (non-positive depth)."""


class NoSignalError(SeatbeltError, ValueError):
    """A projected curve carries no gradient energy."""


class DegenerateFitError(SeatbeltError, ValueError):
    """Polynomial system is rank deficient."""


class ConfigError(SeatbeltError):
    """Pipeline or calibration configuration could not be loaded."""


class SceneError(SeatbeltError, ValueError):
    """A synthetic scene specification is invalid."""


class ManifestError(SeatbeltError):
    """Corpus manifest does not match the files on disk."""
