"""Exception hierarchy shared across the codec."""


class LicError(Exception):
    """Base class for all codec errors."""


class ShapeError(LicError):
    """Tensor/weight shape inconsistency; message names the offending layer."""


class ModelFormatError(LicError):
    """Malformed or unsupported .licm model file."""


class BitstreamError(LicError):
    """Malformed, truncated or exhausted .lic bitstream."""


class ModelMismatchError(LicError):
    """Bitstream header does not match the supplied model."""


class ImageError(LicError):
    """Unsupported or unreadable image input."""


class SymbolRangeError(LicError):
    """A symbol fell outside the CDF support handed to the range coder."""
