"""Exception hierarchy shared across the toolkit."""


class CxrError(Exception):
    """Base class for all toolkit errors."""


# imagecore
class DecodeError(CxrError):
    """Image bytes are a recognized container but cannot be decoded."""


class UnsupportedFormat(CxrError):
    """Image bytes are not a PNG or JPEG container."""


class ChannelError(CxrError):
    """Tensor has the wrong number of channels for the operation."""


class GridError(CxrError):
    """Image is smaller than the requested CLAHE tile grid."""


# augment
class CropError(CxrError):
    """No valid crop exists for the given image."""


class SingularTransform(CxrError):
    """Perspective corner correspondence yields a singular system."""


# nn
class ShapeError(CxrError):
    """Operator inputs have inconsistent dimensions."""


class MissingWeight(CxrError):
    """Graph references a tensor name absent from the weight store."""


class FormatError(CxrError):
    """Weight file has a bad magic, version, or unparseable header."""


class IntegrityError(CxrError):
    """Weight file header and blob disagree, or blob holds non-finite values."""


# models / explain
class HeadError(CxrError):
    """Graph does not end in the required GAP -> linear head."""


class LayerNotFound(CxrError):
    """Requested capture layer is not a node of the graph."""


# evalmetrics
class DegenerateSet(CxrError):
    """Score set lacks a positive or a negative sample."""


class ManifestError(CxrError):
    """Dataset manifest is malformed (bad label, duplicate path, bad JSON)."""


class EmptyClassWarning(UserWarning):
    """A class in the manifest has zero samples."""


# cli / service
class ConfigError(CxrError):
    """Configuration file or flag value violates a range constraint."""
