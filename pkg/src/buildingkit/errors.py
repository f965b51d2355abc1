"""Exception types shared across the toolkit."""


class InvalidGeometry(ValueError):
    """Ring or polygon violates a geometry invariant and could not be repaired."""


class InvalidGrid(ValueError):
    """Raster grid specification is unusable (empty, non-positive pixel size, ...)."""


class InvalidCoordinate(ValueError):
    """Longitude/latitude outside the accepted domain."""


class SemanticMismatch(TypeError):
    """Operation received a raster whose semantic does not match its contract."""


class GridMismatch(ValueError):
    """Rasters that must share grid geometry do not."""


class UndefinedResult(ValueError):
    """The requested quantity is undefined for this input (e.g. empty reference set)."""


class MissingInput(ValueError):
    """A required input table/column/entry is absent."""


class FileFormatError(OSError):
    """A file exists but cannot be parsed under the documented format."""
