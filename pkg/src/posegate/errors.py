"""Exception types shared across the package."""

from __future__ import annotations


class PoseGateError(Exception):
    """Base class for every error raised by this package."""


class ZeroNormOrientation(PoseGateError):
    """A quaternion with zero norm cannot represent an orientation."""


class ParseError(PoseGateError):
    """A text record could not be parsed."""

    def __init__(self, source: str, line_no: int, reason: str):
        super().__init__(f"{source}:{line_no}: {reason}")
        self.source = source
        self.line_no = line_no
        self.reason = reason


class DuplicateImageId(PoseGateError):
    """The same image id appeared twice in one pose file or database."""

    def __init__(self, image_id: str):
        super().__init__(f"duplicate image id: {image_id!r}")
        self.image_id = image_id


class NonUnitQuaternion(PoseGateError):
    """A stored ground-truth quaternion deviates too far from unit norm.

    Usually a symptom of swapped columns (e.g. (x, y, z, w) order) in the
    input file rather than of mild numerical drift, which is silently
    renormalized instead.
    """


class MissingDescriptors(PoseGateError):
    """No descriptor set is available for an image that needs matching."""

    def __init__(self, image_id: str):
        super().__init__(f"no descriptors available for image {image_id!r}")
        self.image_id = image_id


class KindMismatch(PoseGateError):
    """Descriptor sets with different element kinds cannot be matched."""


class DetectorFailure(PoseGateError):
    """A pluggable feature detector violated its contract or crashed."""


class DecodeError(PoseGateError):
    """An image array or descriptor cache file is malformed."""


class PredictionFailure(PoseGateError):
    """A pose predictor could not produce a pose for a query image."""

    def __init__(self, image_id: str, reason: str = ""):
        detail = f": {reason}" if reason else ""
        super().__init__(f"prediction failed for image {image_id!r}{detail}")
        self.image_id = image_id


class MissingGroundTruth(PoseGateError):
    """Evaluation was asked to score an image with no ground-truth pose."""

    def __init__(self, image_id: str):
        super().__init__(f"no ground-truth pose for image {image_id!r}")
        self.image_id = image_id


class SceneMismatch(PoseGateError):
    """Two evaluation reports do not describe the same scene and query set."""


class DescriptorCollision(PoseGateError):
    """Distinct landmark descriptors could not be generated (dimension too small)."""
