"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor extents are invalid or inconsistent for an operation."""


class ConfigError(ValueError):
    """A model/training/CLI configuration is internally inconsistent."""


class LabelError(ValueError):
    """A class label is out of range or unrecognized."""


class FormatError(ValueError):
    """A binary file does not match its expected layout."""


class UnsupportedTypeError(FormatError):
    """A file declares a voxel datatype this reader does not handle."""


class TruncatedFileError(FormatError):
    """A file ends before the data its header promises."""


class EmptySequenceError(ValueError):
    """A temporal operation received a sequence with no frames."""


class DegenerateClassError(ValueError):
    """ROC analysis needs at least one positive and one negative sample."""
