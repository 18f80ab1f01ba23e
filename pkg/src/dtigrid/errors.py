"""Exception and warning types shared across the package."""


class DtigridError(Exception):
    """Base class for all package errors."""


class InvalidInputError(DtigridError):
    """Input violates a documented precondition."""


class ParseError(DtigridError):
    """Malformed input file; message names the offending row/column."""


class CapacityError(DtigridError):
    """More tracts than grid cells."""


class DegenerateGeometryError(DtigridError):
    """Point configuration has no usable 2D embedding."""


class ShapeError(DtigridError):
    """Array shapes are inconsistent."""


class NumericError(DtigridError):
    """Non-finite values appeared where finite ones are required."""


class FormatError(DtigridError):
    """File container is corrupt or has an unsupported version."""


class CheckInvalidError(DtigridError):
    """Gradient check cannot run (e.g. loss is not deterministic)."""


class DegenerateAxisWarning(UserWarning):
    """A planar axis collapsed to a single value during grid normalization."""


class DegenerateBatchWarning(UserWarning):
    """A batch had no valid anchors for the triplet loss."""


class LabelAsFactorWarning(UserWarning):
    """MIG was computed against the class label for lack of true factors."""
