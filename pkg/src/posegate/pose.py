"""6-DoF camera pose and the distance metrics used for retrieval and evaluation.

A pose is a position in meters plus an orientation quaternion stored in
(w, x, y, z) order. Pose regressors emit raw, not-necessarily-unit
quaternions, so the orientation is kept exactly as given and only
normalized where a metric requires it. Everything here is a pure function
over immutable values and safe to call concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ZeroNormOrientation

# Below this squared-norm deviation from 1, renormalizing would only churn
# the lowest mantissa bits; skipping keeps file round trips bit-exact.
_UNIT_SKIP_TOL = 1e-12


def _readonly(arr: np.ndarray) -> np.ndarray:
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class Pose:
    """Camera pose: 3-vector position (meters) + quaternion orientation (w, x, y, z).

    All seven components must be finite and the quaternion norm must be
    positive; unit norm is not required.
    """

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=np.float64).reshape(-1)
        ori = np.asarray(self.orientation, dtype=np.float64).reshape(-1)
        if pos.size != 3:
            raise ValueError(f"position must have 3 components, got {pos.size}")
        if ori.size != 4:
            raise ValueError(f"orientation must have 4 components, got {ori.size}")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(ori))):
            raise ValueError("pose components must be finite")
        if float(ori @ ori) == 0.0:
            raise ZeroNormOrientation("orientation quaternion has zero norm")
        object.__setattr__(self, "position", _readonly(pos))
        object.__setattr__(self, "orientation", _readonly(ori))

    def __eq__(self, other) -> bool:
        if not isinstance(other, Pose):
            return NotImplemented
        return np.array_equal(self.position, other.position) and np.array_equal(
            self.orientation, other.orientation
        )

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    @classmethod
    def _from_validated(cls, position: np.ndarray, orientation: np.ndarray) -> "Pose":
        """Internal: wrap arrays a bulk parser has already validated.

        Both must be read-only float64 views/arrays of the right shape;
        skips the per-instance checks of ``__init__``.
        """
        pose = object.__new__(cls)
        object.__setattr__(pose, "position", position)
        object.__setattr__(pose, "orientation", orientation)
        return pose

    def unit_orientation(self) -> np.ndarray:
        """Orientation scaled to unit norm (returned as-is when already unit)."""
        return normalize_quaternion(self.orientation)

    def components(self) -> list[float]:
        """The seven pose numbers in file order: tx ty tz qw qx qy qz."""
        return [*self.position.tolist(), *self.orientation.tolist()]


@dataclass(frozen=True)
class DistanceConfig:
    """Options for the orientation metric.

    The default metric treats a quaternion and its negation as distinct
    points, which matches how raw regressor outputs are compared against
    database ground truth. ``sign_invariant_orientation`` takes the minimum
    over both signs of the reference quaternion instead, for pose files
    that mix hemispheres.
    """

    sign_invariant_orientation: bool = False


def normalize_quaternion(q: np.ndarray) -> np.ndarray:
    """Scale a quaternion to unit norm; raises ZeroNormOrientation on zero input."""
    q = np.asarray(q, dtype=np.float64)
    norm_sq = float(q @ q)
    if norm_sq == 0.0:
        raise ZeroNormOrientation("cannot normalize a zero quaternion")
    if abs(norm_sq - 1.0) <= _UNIT_SKIP_TOL:
        return q
    return q / math.sqrt(norm_sq)


def position_distance(a: Pose, b: Pose) -> float:
    """Euclidean distance between the two positions, in meters."""
    return float(np.linalg.norm(a.position - b.position))


def orientation_distance(
    predicted: Pose, reference: Pose, cfg: DistanceConfig = DistanceConfig()
) -> float:
    """Euclidean distance between the normalized predicted quaternion and the reference.

    Only the predicted side is normalized; the reference is used exactly as
    stored (database quaternions are unit norm after ingestion). For unit
    inputs the result lies in [0, 2], with 2 attained by antipodal
    quaternions unless ``sign_invariant_orientation`` is set.
    """
    qp = predicted.unit_orientation()
    qr = reference.orientation
    dist = float(np.linalg.norm(qp - qr))
    if cfg.sign_invariant_orientation:
        dist = min(dist, float(np.linalg.norm(qp + qr)))
    return dist


def rotation_error_degrees(a: Pose, b: Pose) -> float:
    """Geodesic angle in degrees between the two rotations, in [0, 180].

    Symmetric, and invariant under sign flips of either quaternion (q and
    -q encode the same physical rotation).
    """
    dot = float(a.unit_orientation() @ b.unit_orientation())
    return math.degrees(2.0 * math.acos(min(1.0, abs(dot))))


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a*b in (w, x, y, z) order."""
    aw, ax, ay, az = np.asarray(a, dtype=np.float64)
    bw, bx, by, bz = np.asarray(b, dtype=np.float64)
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_from_axis_angle(axis: np.ndarray, angle_rad: float) -> np.ndarray:
    """Unit quaternion rotating by ``angle_rad`` about ``axis`` (normalized here)."""
    axis = np.asarray(axis, dtype=np.float64)
    norm = float(np.linalg.norm(axis))
    if norm == 0.0:
        raise ValueError("rotation axis must be nonzero")
    half = 0.5 * angle_rad
    return np.concatenate(([math.cos(half)], math.sin(half) * axis / norm))


def quat_rotate(q: np.ndarray, vectors: np.ndarray) -> np.ndarray:
    """Rotate one or more 3-vectors by a unit quaternion.

    ``vectors`` may be shaped (3,) or (N, 3); the result has the same shape.
    """
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(vectors, dtype=np.float64)
    u = q[1:]
    w = q[0]
    # v' = v + 2 w (u x v) + 2 u x (u x v), valid for unit q
    uv = np.cross(u, v)
    return v + 2.0 * (w * uv + np.cross(u, uv))
