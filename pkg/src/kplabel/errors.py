"""Exception hierarchy shared by all kplabel modules."""


class KplabelError(Exception):
    """Base class for all errors raised by this package."""


# --- geometry ---

class InvalidDepth(KplabelError):
    """Depth sample is zero/missing and no valid fallback was found."""


class OutOfBounds(KplabelError):
    """Pixel lies outside the image."""


class BehindCamera(KplabelError):
    """Point has non-positive depth and cannot be projected."""


# --- sparse solve ---

class NotConnected(KplabelError):
    """Scene graph is not rigidly connected; the solve would be under-determined."""


class UnobservedKeypoint(KplabelError):
    """A keypoint id has no observation in any scene."""


class DidNotConverge(KplabelError):
    """Solver hit its iteration cap; the best iterate is attached.

    Attributes:
        solution: the flagged SparseSolution reached when iteration stopped.
    """

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


# --- dense model ---

class NoSeedAttached(KplabelError):
    """Every seed is farther than the attachment radius from the cloud."""


class EmptyModel(KplabelError):
    """A dense model with zero points where points are required."""


# --- registration ---

class Degenerate(KplabelError):
    """Source points are collinear or coincident; alignment is ambiguous."""


class LengthMismatch(KplabelError):
    """Corresponding point lists differ in length."""


class TooFewPoints(KplabelError):
    """Fewer than the minimum of 3 correspondences."""


# --- labeling / metrics ---

class NothingToBound(KplabelError):
    """No visible keypoint and no mask pixel to build a bounding box from."""


class EmptyComparison(KplabelError):
    """Metric requested on an empty set of comparable items."""


class DimensionMismatch(KplabelError):
    """Mask/image shapes differ."""


# --- dataset io ---

class MissingFile(KplabelError):
    """A referenced file does not exist."""


class TrajectoryLengthMismatch(KplabelError):
    """Trajectory row count differs from the scene frame count."""


class MalformedRow(KplabelError):
    """Unparseable trajectory row; carries the line number."""

    def __init__(self, message, line_number=None):
        super().__init__(message)
        self.line_number = line_number


class SchemaVersionUnsupported(KplabelError):
    """JSON document declares a schema_version this build cannot read."""


class ValidationError(KplabelError):
    """Document fails an invariant; carries a JSON-path-like context string."""

    def __init__(self, message, path=None):
        super().__init__(message)
        self.path = path


# --- synthetic oracle / pipeline ---

class SpecInvalid(KplabelError):
    """Synthetic world spec fails validation."""


class StageError(KplabelError):
    """Pipeline stage cannot run (missing prerequisite, bad config)."""
