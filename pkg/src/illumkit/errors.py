"""Exception and warning types shared across the toolkit."""


class IllumError(Exception):
    """Base class for all illumkit errors."""


# ---- vector / color errors ----------------------------------------------

class ZeroVector(IllumError):
    """A vector required to be non-zero has (near-)zero norm."""


class DegenerateSum(IllumError):
    """Chromaticity requested for a vector whose component sum is ~0."""


# ---- image / estimator errors -------------------------------------------

class BadLevels(IllumError):
    """Saturation level does not exceed black level."""


class TooSmall(IllumError):
    """Image is smaller than the filter support required by an estimator."""


class SelectionEmpty(IllumError):
    """Bright/dark pixel selection came out empty."""


class EigenFailure(IllumError):
    """Power iteration did not converge."""


# ---- correction / fitting errors ----------------------------------------

class DegenerateCorpus(IllumError):
    """Training corpus has fewer than 3 pairwise non-parallel estimates."""


class SingularSystem(IllumError):
    """Normal-equation system is numerically singular."""


class CollapsedOutput(IllumError):
    """A corrected illuminant collapsed to the zero vector."""


class NonPositiveIlluminant(IllumError):
    """White balance requires strictly positive channel values."""


class SingularPlant(IllumError):
    """A planted synthetic transform is not invertible."""


# ---- dataset errors -------------------------------------------------------

class ParseError(IllumError):
    """Manifest file could not be parsed; message carries row/column."""


class MissingImage(IllumError):
    """An image referenced by the manifest does not exist."""


class InvalidLevels(IllumError):
    """A manifest row has saturation <= black."""


class MissingFoldLabel(IllumError):
    """Cross-validation requested but a record carries no fold label."""


class DecodeError(IllumError):
    """Image file could not be decoded as 16-bit 3-channel."""


class AllMasked(IllumError):
    """Every pixel of a sample is masked out."""


# ---- evaluation errors ----------------------------------------------------

class EmptyInput(IllumError):
    """Statistics requested over an empty error list."""


# ---- LUT serialization errors --------------------------------------------

class BadMagic(IllumError):
    """Stream does not start with the LUT magic bytes."""


class BadVersion(IllumError):
    """LUT stream has an unsupported format version."""


class TruncatedStream(IllumError):
    """LUT stream ended before all declared fields were read."""


class ChecksumMismatch(IllumError):
    """LUT stream checksum does not match its payload."""


# ---- warnings -------------------------------------------------------------

class NoConvergenceWarning(UserWarning):
    """Alternating solver hit the iteration cap before converging."""


class NearSingularWarning(UserWarning):
    """A projective transform is rank-deficient up to tolerance."""


class FailedNodeWarning(UserWarning):
    """A LUT node fit failed and was replaced by the global transform."""
