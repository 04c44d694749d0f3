"""Exception types shared across the mapping pipeline."""


class MappingError(Exception):
    """Base class for every error raised by this package."""


# --- camera / geodesy ---

class InvalidDepth(MappingError):
    """Depth value is non-positive or not finite."""


class OutOfBounds(MappingError):
    """Pixel coordinate lies outside the image."""


class NoValidDepth(MappingError):
    """No valid depth samples in the queried region."""


class EmptyInstance(MappingError):
    """Instance sub-mask has no member pixels."""


# --- mask fusion ---

class SingularHomography(MappingError):
    """Homography is not invertible."""


class DimensionMismatch(MappingError):
    """Rasters that must share a shape do not."""


# --- sidewalk geometry ---

class RoiOutOfBounds(MappingError):
    """Region of interest exceeds the mask bounds."""


class NoSidewalk(MappingError):
    """No usable sidewalk band in the region of interest."""


# --- vetting ---

class IncompleteVetting(MappingError):
    """Vetting record lacks a verdict for a detected class."""


class UnknownInstance(MappingError):
    """Vetting override references an instance index that does not exist."""


class InvalidVerdict(MappingError):
    """Verdict and overrides are mutually inconsistent."""


# --- workspace model / service ---

class Unauthenticated(MappingError):
    """Caller has no authenticated user."""


class ChangesetClosed(MappingError):
    """Edit attempted on a closed changeset."""


class AlreadyClosed(MappingError):
    """Close attempted on an already closed changeset."""


class DuplicateNodeId(MappingError):
    """Node id is already present in the workspace."""


class DanglingReference(MappingError):
    """Way references a node id that does not exist."""


# --- session files ---

class FormatError(MappingError):
    """Session file is structurally malformed."""

    def __init__(self, path: str, field: str, detail: str = ""):
        self.path = path
        self.field = field
        msg = f"{path}: bad field {field!r}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


class InvariantViolation(MappingError):
    """Session content violates a semantic invariant."""


# --- synthetic scenes ---

class DegenerateScene(MappingError):
    """Scene specification cannot be rendered."""


# --- metrics ---

class LengthMismatch(MappingError):
    """Paired sequences have different lengths."""


class EmptyInput(MappingError):
    """Statistic requested over an empty sequence."""


# --- configuration ---

class ConfigError(MappingError):
    """Config file is malformed or names an unknown key."""


# --- service client ---

class ServiceError(MappingError):
    """Server rejected a request; carries the HTTP status and detail."""

    def __init__(self, status: int, detail: str = ""):
        self.status = status
        self.detail = detail
        super().__init__(f"service returned {status}: {detail}")


class NetworkError(MappingError):
    """Server unreachable or the connection failed mid-request."""
