"""Exception types raised across the toolkit."""


class MitoforgeError(Exception):
    """Base class for all toolkit errors."""


class DegenerateTissue(MitoforgeError):
    """Too few tissue pixels, or a single-stain image: no basis can be fit."""


class SingularBasis(MitoforgeError):
    """Stain basis columns are (numerically) linearly dependent."""


class ImageTooSmall(MitoforgeError):
    """Tile size exceeds an image dimension."""


class InsufficientRecords(MitoforgeError):
    """Requested split sizes exceed the available record count."""


class EmptyAssignment(MitoforgeError):
    """A sampler was asked to draw from an assignment with no candidates."""


class MissingLosses(MitoforgeError):
    """OHEM sampling requires a loss for every proposal."""


class ConfigError(MitoforgeError):
    """Pipeline configuration failed validation; message carries field path."""
