"""Exception hierarchy shared across the package."""


class EgoFovError(Exception):
    """Base class for all package errors."""


class ImageFormatError(EgoFovError):
    """Raster file has a malformed or unsupported header."""


class ImageReadError(EgoFovError):
    """Raster file missing or unreadable."""


class DegenerateRegionError(EgoFovError):
    """Region second-moment matrix has no usable ellipse."""


class EmptyIndexError(EgoFovError):
    """Descriptor index built over zero usable descriptors."""


class DegenerateSampleError(EgoFovError):
    """Affine sample points are collinear."""


class InsufficientMatchesError(EgoFovError):
    """Fewer correspondences than a model fit requires."""


class NoConsensusError(EgoFovError):
    """RANSAC found no model with enough inliers."""


class InvalidRotationError(EgoFovError):
    """Matrix fails the orthonormality checks for a rotation."""


class ParameterError(EgoFovError, ValueError):
    """Argument outside its documented range."""


class ManifestError(EgoFovError):
    """Corpus manifest is malformed or inconsistent."""


class CorpusLoadError(EgoFovError):
    """A corpus entry failed validation; message names the entry."""


class GeoLookupError(EgoFovError):
    """Geo query against a corpus with no geo-tagged entries."""


class SessionError(EgoFovError):
    """Multi-stream session file is unusable."""


class EvaluationError(EgoFovError):
    """Result and ground-truth sets cannot be aligned."""


class ConfigError(EgoFovError):
    """Run configuration contains unknown or invalid keys."""
