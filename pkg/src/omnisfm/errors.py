"""Exception hierarchy shared by the pipeline stages."""


class OmniSfmError(Exception):
    """Base class for all errors raised by omnisfm."""


class DomainError(OmniSfmError, ValueError):
    """An argument lies outside the domain of the operation."""


class ProjectionError(DomainError):
    """A point coincides with the camera center, so its bearing is undefined."""


class InsufficientDataError(OmniSfmError, ValueError):
    """Too few correspondences for the requested estimator."""


class CheiralityError(OmniSfmError):
    """No essential-matrix decomposition puts a majority of points in front of both cameras."""


class VerificationError(OmniSfmError):
    """Two-view RANSAC did not find enough inliers to accept the pair."""


class RegistrationError(OmniSfmError):
    """Resection did not find enough inliers to register an image."""


class InitializationError(OmniSfmError):
    """No verified image pair is available to seed the reconstruction."""


class TriangulationError(OmniSfmError):
    """A track failed one of the triangulation acceptance tests.

    Attributes:
        reason: short machine-readable tag, e.g. ``"low-parallax"``.
    """

    def __init__(self, reason, message=None):
        super().__init__(message or reason)
        self.reason = reason


class ParseError(OmniSfmError, ValueError):
    """A text input file is malformed.

    Attributes:
        lineno: 1-based line number of the offending line (``None`` if unknown).
    """

    def __init__(self, message, lineno=None, path=None):
        where = ""
        if path is not None:
            where += f"{path}:"
        if lineno is not None:
            where += f"{lineno}: "
        elif where:
            where += " "
        super().__init__(where + message)
        self.lineno = lineno
        self.path = path
