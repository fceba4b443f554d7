"""Deterministic synthetic worlds with closed-form matching ground truth.

A scene is a cloud of point landmarks, each carrying a unique binary
descriptor. A camera at a pose sees a landmark iff it lies within the view
distance and inside the view cone around the camera's forward axis
(quaternion-rotated +z). A frame's descriptor set has exactly one keypoint
per visible landmark, so the good-match count between two frames equals the
size of their visible-set intersection and every downstream stage can be
checked against exact set arithmetic.

Descriptors are generated with pairwise Hamming distances confined to a
band chosen so that ratio-test matching at 0.7 can neither miss a shared
landmark nor accept a spurious pair: shared landmarks match at distance 0
against a second neighbor in the band, and non-shared descriptors can never
be less than 0.7 times apart. (The matcher needs two train descriptors to
form a ratio, so a frame seeing a single landmark matches nothing.)

Everything is reproducible from (seed, parameters) alone.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .database import PoseDatabase, TrainEntry, write_pose_file
from .errors import DescriptorCollision
from .features import (
    KIND_BINARY_HAMMING,
    DescriptorSet,
    DescriptorStore,
    PREPROCESSED_SIZE,
    _POPCOUNT,
)
from .pose import Pose, quat_conjugate, quat_from_axis_angle, quat_rotate

DESCRIPTOR_BITS = 256
_MAX_DRAWS_PER_DESCRIPTOR = 2000


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    """Landmark world: positions, unique descriptors, and the visibility model."""

    seed: int
    landmark_positions: np.ndarray  # (L, 3) meters
    landmark_descriptors: np.ndarray  # (L, bits/8) uint8
    box_lo: np.ndarray
    box_hi: np.ndarray
    fov_half_angle_deg: float
    max_view_distance: float

    @property
    def n_landmarks(self) -> int:
        return self.landmark_positions.shape[0]

    @property
    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        return self.box_lo, self.box_hi


@dataclass(frozen=True, eq=False)
class SyntheticFrame:
    """One rendered camera frame: true pose, visible landmarks, descriptors."""

    image_id: str
    true_pose: Pose
    visible_landmark_ids: np.ndarray  # sorted int64
    descriptor_set: DescriptorSet


def hamming_band(bits: int) -> tuple[int, int]:
    """Pairwise-distance band [lo, hi] enforced between landmark descriptors.

    Centered on bits/2 with half-width floor(3*bits/34), which guarantees
    lo >= 0.7 * hi (no ratio-0.7 false positives) and lo >= 0.4 * bits.
    """
    half_width = (3 * bits) // 34
    lo = bits // 2 - half_width
    hi = bits // 2 + half_width
    return lo, hi


def distinct_descriptors(
    rng: np.random.Generator, count: int, bits: int = DESCRIPTOR_BITS
) -> np.ndarray:
    """Random binary descriptors with every pairwise Hamming distance in the band."""
    if bits % 8 != 0 or bits <= 0:
        raise ValueError("descriptor bits must be a positive multiple of 8")
    lo, hi = hamming_band(bits)
    if lo < 1 or lo < 0.7 * hi:
        raise DescriptorCollision(
            f"{bits}-bit descriptors cannot support an unambiguous matching band"
        )
    accepted = np.empty((count, bits // 8), dtype=np.uint8)
    n_accepted = 0
    while n_accepted < count:
        for attempt in range(_MAX_DRAWS_PER_DESCRIPTOR):
            candidate = rng.integers(0, 256, size=bits // 8, dtype=np.uint8)
            if n_accepted == 0:
                break
            dists = _POPCOUNT[np.bitwise_xor(accepted[:n_accepted], candidate)].sum(axis=1)
            if int(dists.min()) >= lo and int(dists.max()) <= hi:
                break
        else:
            raise DescriptorCollision(
                f"could not place descriptor {n_accepted + 1}/{count} within "
                f"Hamming band [{lo}, {hi}] after {_MAX_DRAWS_PER_DESCRIPTOR} draws"
            )
        accepted[n_accepted] = candidate
        n_accepted += 1
    return accepted


def generate_scene(
    seed: int,
    n_landmarks: int = 500,
    box: tuple = ((0.0, 0.0, 0.0), (4.0, 4.0, 2.5)),
    fov_half_angle_deg: float = 45.0,
    max_view_distance: float = 2.5,
    descriptor_bits: int = DESCRIPTOR_BITS,
) -> SyntheticScene:
    """Generate a scene deterministically from its seed."""
    if n_landmarks < 1:
        raise ValueError("need at least one landmark")
    if not (0.0 < fov_half_angle_deg < 90.0):
        raise ValueError("fov_half_angle_deg must be in (0, 90)")
    lo = np.asarray(box[0], dtype=np.float64)
    hi = np.asarray(box[1], dtype=np.float64)
    rng = np.random.default_rng(seed)
    positions = rng.uniform(lo, hi, size=(n_landmarks, 3))
    descriptors = distinct_descriptors(rng, n_landmarks, descriptor_bits)
    for arr in (positions, descriptors, lo, hi):
        arr.flags.writeable = False
    return SyntheticScene(
        seed=seed,
        landmark_positions=positions,
        landmark_descriptors=descriptors,
        box_lo=lo,
        box_hi=hi,
        fov_half_angle_deg=float(fov_half_angle_deg),
        max_view_distance=float(max_view_distance),
    )


def render_frame(scene: SyntheticScene, pose: Pose, image_id: str = "") -> SyntheticFrame:
    """Render the frame seen from a pose.

    A landmark is visible iff 0 < distance <= max_view_distance and its
    direction is within the half-angle cone around the camera forward axis.
    Keypoint coordinates are the cone-plane projection mapped into the
    preprocessed image square.
    """
    rel = scene.landmark_positions - pose.position
    dist = np.sqrt(np.sum(rel * rel, axis=1))
    cam = quat_rotate(quat_conjugate(pose.unit_orientation()), rel)
    cos_fov = math.cos(math.radians(scene.fov_half_angle_deg))
    visible = (dist > 0.0) & (dist <= scene.max_view_distance) & (cam[:, 2] >= dist * cos_fov)
    ids = np.nonzero(visible)[0].astype(np.int64)

    if ids.size:
        tan_fov = math.tan(math.radians(scene.fov_half_angle_deg))
        z = cam[ids, 2]
        half = (PREPROCESSED_SIZE - 1) / 2.0
        u = half * (1.0 + cam[ids, 0] / (z * tan_fov))
        v = half * (1.0 + cam[ids, 1] / (z * tan_fov))
        keypoints = np.stack([u, v], axis=1).astype(np.float32)
    else:
        keypoints = np.empty((0, 2), dtype=np.float32)

    descriptor_set = DescriptorSet(
        image_id, keypoints, scene.landmark_descriptors[ids], KIND_BINARY_HAMMING
    )
    ids.flags.writeable = False
    return SyntheticFrame(image_id, pose, ids, descriptor_set)


def _looking_pose(
    rng: np.random.Generator,
    position: np.ndarray,
    box_lo: np.ndarray,
    box_hi: np.ndarray,
) -> Pose:
    """Pose at ``position`` looking at a random point in the box's central half.

    Aiming into the landmark cloud keeps sampled frames populated while the
    random targets still spread orientations widely.
    """
    target = rng.uniform(
        box_lo + 0.25 * (box_hi - box_lo), box_lo + 0.75 * (box_hi - box_lo)
    )
    direction = target - position
    norm = float(np.linalg.norm(direction))
    direction = direction / norm if norm > 1e-9 else np.array([1.0, 0.0, 0.0])
    forward = np.array([0.0, 0.0, 1.0])
    axis = np.cross(forward, direction)
    if float(np.linalg.norm(axis)) < 1e-12:
        axis = np.array([1.0, 0.0, 0.0])  # parallel case: any axis works
    angle = math.acos(float(np.clip(direction @ forward, -1.0, 1.0)))
    return Pose(position, quat_from_axis_angle(axis, angle))


@dataclass(frozen=True, eq=False)
class SceneSplit:
    """A train/test split over one scene, plus its generation labels.

    Training frames populate a retrieval database (descriptors attached
    in memory). ``test_out_of_region`` records which test frames were
    deliberately sampled outside the training sub-region.
    """

    scene: SyntheticScene
    database: PoseDatabase
    train_frames: tuple[SyntheticFrame, ...]
    test_frames: tuple[SyntheticFrame, ...]
    test_out_of_region: np.ndarray  # (n_test,) bool
    coverage_bias: float

    @property
    def ground_truth(self) -> dict[str, Pose]:
        truth = {frame.image_id: frame.true_pose for frame in self.train_frames}
        truth.update({frame.image_id: frame.true_pose for frame in self.test_frames})
        return truth


# Fractions of the box x-extent delimiting the training sub-region and the
# deliberately-uncovered far region; the gap between them keeps far queries
# unambiguously beyond any plausible d_th.
_TRAIN_X_FRACTION = 0.5
_FAR_X_FRACTION = 0.75


def generate_split(
    scene: SyntheticScene,
    seed: int,
    n_train: int,
    n_test: int,
    coverage_bias: float,
) -> SceneSplit:
    """Sample a training database and a query set with controlled coverage.

    Training poses live in a sub-region of the box (the low-x half). Each
    test pose is sampled outside that region with probability
    ``coverage_bias``, emulating query distributions that drift away from
    the training trajectory.
    """
    if n_train < 1 or n_test < 1:
        raise ValueError("n_train and n_test must be at least 1")
    if not (0.0 <= coverage_bias <= 1.0):
        raise ValueError("coverage_bias must be in [0, 1]")

    rng = np.random.default_rng(seed)
    lo, hi = scene.box_lo, scene.box_hi
    span_x = hi[0] - lo[0]
    train_hi = lo.copy()
    train_hi[0] = lo[0] + _TRAIN_X_FRACTION * span_x
    train_hi[1:] = hi[1:]
    far_lo = lo.copy()
    far_lo[0] = lo[0] + _FAR_X_FRACTION * span_x

    train_frames = []
    for i in range(n_train):
        position = rng.uniform(lo, train_hi)
        pose = _looking_pose(rng, position, lo, hi)
        train_frames.append(render_frame(scene, pose, f"train/{i:05d}"))

    out_flags = rng.random(n_test) < coverage_bias
    test_frames = []
    for i in range(n_test):
        if out_flags[i]:
            position = rng.uniform(far_lo, hi)
        else:
            position = rng.uniform(lo, train_hi)
        pose = _looking_pose(rng, position, lo, hi)
        test_frames.append(render_frame(scene, pose, f"test/{i:05d}"))

    entries = [
        TrainEntry(frame.image_id, frame.true_pose, descriptor_ref=frame.descriptor_set)
        for frame in train_frames
    ]
    db = PoseDatabase(entries, scene_name=f"synthetic-{scene.seed}")
    out_flags.flags.writeable = False
    return SceneSplit(
        scene=scene,
        database=db,
        train_frames=tuple(train_frames),
        test_frames=tuple(test_frames),
        test_out_of_region=out_flags,
        coverage_bias=float(coverage_bias),
    )


def dump_split(split: SceneSplit, out_dir: str | Path) -> None:
    """Write a split as pose files + descriptor caches, the same formats the
    CLI consumes for real data."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_pose_file(
        [(frame.image_id, frame.true_pose) for frame in split.train_frames],
        out_dir / "train_poses.txt",
    )
    write_pose_file(
        [(frame.image_id, frame.true_pose) for frame in split.test_frames],
        out_dir / "test_poses.txt",
    )
    store = DescriptorStore()
    for frame in (*split.train_frames, *split.test_frames):
        store.add(frame.descriptor_set)
    store.save_to(out_dir / "descriptors")
    scene = split.scene
    meta = {
        "scene_seed": scene.seed,
        "n_landmarks": scene.n_landmarks,
        "box": [scene.box_lo.tolist(), scene.box_hi.tolist()],
        "fov_half_angle_deg": scene.fov_half_angle_deg,
        "max_view_distance": scene.max_view_distance,
        "n_train": len(split.train_frames),
        "n_test": len(split.test_frames),
        "coverage_bias": split.coverage_bias,
        "n_test_out_of_region": int(split.test_out_of_region.sum()),
    }
    (out_dir / "scene.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
