"""Exception hierarchy shared across the toolkit."""


class PlateWasteError(Exception):
    """Base class for all toolkit errors."""


class DimensionMismatch(PlateWasteError):
    """Two masks/images that must share dimensions do not."""


class ShapeMismatch(PlateWasteError):
    """Tensor shapes are incompatible with the requested operation."""


class AreaMismatch(PlateWasteError):
    """Count vectors come from masks of different total area."""


class EmptyInput(PlateWasteError):
    """An operation requiring at least one element received none."""


class ZeroBenchmark(PlateWasteError):
    """Eating rate requested for a class never present pre-consumption."""


class NoDefinedClasses(PlateWasteError):
    """Aggregation has no defined classes left after filtering."""


class InvalidConfig(PlateWasteError):
    """A model or run configuration violates its invariants."""


class ParseError(PlateWasteError):
    """A manifest or config file is malformed; message names the field."""


class MissingFile(PlateWasteError):
    """Referenced files do not exist; message lists the absent paths."""


class FormatError(PlateWasteError):
    """A mask file is not a single-channel 8-bit image."""


class LabelOutOfRange(PlateWasteError):
    """A mask contains label values outside the declared class table."""


class TooFewEntries(PlateWasteError):
    """Splitting would leave at least one split empty."""


class InfeasibleSpec(PlateWasteError):
    """Synthetic target proportions cannot be placed on the grid."""


class EmptySplit(PlateWasteError):
    """Evaluation requested on a split with no entries."""


class Divergence(PlateWasteError):
    """Training produced a non-finite loss; message carries epoch/batch."""
