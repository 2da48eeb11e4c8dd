"""Exception hierarchy shared across the toolkit.

Two families matter for the CLI: ``ValidationError`` covers bad arguments,
bad specs and malformed files (exit code 2), ``ExecutionError`` covers
data-dependent runtime failures such as degenerate geometry or a victim
that cannot produce an estimate (exit code 3).
"""


class KaleidiscError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(KaleidiscError):
    """Invalid inputs, specs, configs or file formats."""


class ExecutionError(KaleidiscError):
    """Runtime failure on otherwise well-formed inputs."""


# -- validation -------------------------------------------------------------

class DiscSpecError(ValidationError):
    """Disc/segment parameters violate the construction constraints."""


class SingularConfigurationError(ValidationError):
    """Degenerate point configuration: no perspective map exists."""


class InvalidPoseError(ValidationError):
    """Camera pose parameters outside the supported domain."""


class InvalidSceneError(ValidationError):
    """Scene/camera combination that cannot be rendered."""


class InvalidConfigError(ValidationError):
    """Malformed or out-of-range configuration."""


class InvalidInputError(ValidationError):
    """Operation preconditions violated by the caller."""


class FormatError(ValidationError):
    """Malformed serialized data."""


class BadMagicError(FormatError):
    """Stream does not start with the expected magic bytes."""


class TruncatedDataError(FormatError):
    """Stream ends before the payload is complete."""


class VersionMismatchError(FormatError):
    """Stream declares an unsupported format version."""


# -- execution --------------------------------------------------------------

class BehindCameraError(ExecutionError):
    """Point with non-positive depth cannot be projected."""


class DegenerateSplitError(ExecutionError):
    """A bisection left one side of the region empty."""


class DegenerateRegionError(ExecutionError):
    """Region too small/empty for any flow direction estimate."""


class InsufficientMatchesError(ExecutionError):
    """Too few correspondences survived matching."""


class EstimationFailedError(ExecutionError):
    """Pose estimation could not reach a usable solution."""


class VictimError(ExecutionError):
    """The victim model failed to serve a request."""


class GradientEstimationError(ExecutionError):
    """Every gradient probe failed."""
