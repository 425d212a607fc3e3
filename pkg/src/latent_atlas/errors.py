"""Exception hierarchy shared by all modules.

Exit-code mapping used by the CLI lives in cli.py; everything raised by the
library derives from AtlasError so callers can catch one base.
"""


class AtlasError(Exception):
    """Base class for all latent-atlas errors."""


class UsageError(AtlasError):
    """Bad command-line arguments or parameter combinations."""


class IoError(AtlasError):
    """File I/O problems: missing files, unwritable paths."""


class CorruptFileError(IoError):
    """A container file failed its signature, version, or length checks."""


class ValidationError(AtlasError):
    """A value violates a documented invariant."""


class DimensionMismatchError(ValidationError):
    """Vector dimensions disagree within a dataset or between paired inputs."""


class NonFiniteVectorError(ValidationError):
    """A vector contains NaN or infinity."""


class DuplicateIdError(ValidationError):
    """Two records share an id."""


class EmptyDatasetError(ValidationError):
    """A dataset with no records."""


class ChecksumMismatchError(ValidationError):
    """A model was applied to a dataset it was not fitted on."""


class DegenerateBoundsError(ValidationError):
    """A projection whose bounding box has zero area cannot back a canvas."""


class CurveFitError(AtlasError):
    """Curve fitting did not converge within its budget."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class LayoutDivergenceError(AtlasError):
    """Layout optimization produced a non-finite coordinate."""

    def __init__(self, epoch, point):
        super().__init__(f"non-finite coordinate at epoch {epoch}, point {point}")
        self.epoch = epoch
        self.point = point


class BackendError(AtlasError):
    """A renderer backend failed; carries the identity of the request."""

    def __init__(self, message, tag="", attempts=0):
        super().__init__(message)
        self.tag = tag
        self.attempts = attempts


class ProtocolError(BackendError):
    """The remote service violated the inpainting wire protocol."""
