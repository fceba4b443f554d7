"""End-to-end keyframe decision: predict pose, retrieve, then match-count gate.

A query image is accepted as a keyframe when (1) its predicted pose
retrieves a training image within the position threshold and closest in
orientation, and (2) the query's features reach at least ``gamma`` good
matches against that training image. Rejections record which of the two
tests failed. Matching is deferred until retrieval succeeds, so frames
rejected for lack of a candidate never pay for matching.
"""

from __future__ import annotations

import hashlib
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from typing import Collection, Mapping, Protocol, Sequence

import numpy as np

from .database import PoseDatabase, parse_pose_records, retrieve_image
from .errors import PoseGateError, PredictionFailure
from .features import DescriptorSet, MatcherConfig, match_features
from .pose import DistanceConfig, Pose, quat_from_axis_angle, quat_multiply


class Verdict(str, Enum):
    KEYFRAME = "keyframe"
    REJECTED_NO_CANDIDATE = "rejected_no_candidate"
    REJECTED_INSUFFICIENT_MATCHES = "rejected_insufficient_matches"


@dataclass(frozen=True)
class GateConfig:
    """Gate hyperparameters.

    ``d_th`` is the position threshold in meters (indoor scenes want
    0.1-0.3 m, outdoor 1-2 m); ``gamma`` is the minimum good-match count
    for acceptance and depends on the feature richness of the training set.
    """

    d_th: float
    gamma: int
    matcher: MatcherConfig = MatcherConfig()
    distance: DistanceConfig = DistanceConfig()

    def __post_init__(self):
        if not (math.isfinite(self.d_th) and self.d_th > 0.0):
            raise ValueError(f"d_th must be positive and finite, got {self.d_th}")
        if int(self.gamma) != self.gamma or self.gamma < 1:
            raise ValueError(f"gamma must be a positive integer, got {self.gamma}")


class PosePredictor(Protocol):
    """Anything that maps an image id to an estimated 6-DoF pose."""

    def predict(self, image_id: str) -> Pose: ...


@dataclass(frozen=True, eq=False)
class GateDecision:
    """Verdict for one query image, with the evidence and per-stage timings.

    ``timings_us`` has one entry per executed stage (predict, retrieve,
    extract, match) in microseconds; stages skipped by an early rejection
    are absent. ``extract`` covers obtaining the retrieved image's
    descriptors (query descriptors are supplied by the caller).
    """

    image_id: str
    verdict: Verdict
    predicted_pose: Pose
    retrieved_image_id: str | None = None
    good_match_count: int | None = None
    timings_us: dict[str, int] = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "image_id": self.image_id,
            "verdict": self.verdict.value,
            "retrieved_id": self.retrieved_image_id,
            "match_count": self.good_match_count,
            "pred_pose": self.predicted_pose.components(),
            "timings_us": dict(self.timings_us),
        }


def gate(
    query_image_id: str,
    query_descriptors: DescriptorSet,
    predictor: PosePredictor,
    db: PoseDatabase,
    cfg: GateConfig,
) -> GateDecision:
    """Decide whether one query image is a keyframe.

    Raises MissingDescriptors when the retrieved entry has no descriptor
    source; predictor failures surface as PredictionFailure.
    """
    timings: dict[str, int] = {}

    start = time.perf_counter_ns()
    try:
        predicted = predictor.predict(query_image_id)
    except PredictionFailure:
        raise
    except Exception as exc:
        raise PredictionFailure(query_image_id, str(exc)) from exc
    timings["predict"] = (time.perf_counter_ns() - start) // 1000

    start = time.perf_counter_ns()
    retrieved = retrieve_image(db, predicted, cfg.d_th, cfg.distance)
    timings["retrieve"] = (time.perf_counter_ns() - start) // 1000

    if not retrieved.found:
        return GateDecision(
            query_image_id,
            Verdict.REJECTED_NO_CANDIDATE,
            predicted,
            timings_us=timings,
        )

    entry = db.entries[retrieved.entry_index]
    start = time.perf_counter_ns()
    train_descriptors = db.descriptors_for(entry)
    timings["extract"] = (time.perf_counter_ns() - start) // 1000

    start = time.perf_counter_ns()
    report = match_features(query_descriptors, train_descriptors, cfg.matcher)
    timings["match"] = (time.perf_counter_ns() - start) // 1000

    verdict = (
        Verdict.KEYFRAME
        if report.good_match_count >= cfg.gamma
        else Verdict.REJECTED_INSUFFICIENT_MATCHES
    )
    return GateDecision(
        query_image_id,
        verdict,
        predicted,
        retrieved_image_id=entry.image_id,
        good_match_count=report.good_match_count,
        timings_us=timings,
    )


@dataclass(frozen=True, eq=False)
class BatchResult:
    """Per-query decisions (index-aligned with the input) plus collected errors."""

    decisions: tuple[GateDecision | None, ...]
    errors: tuple[tuple[int, PoseGateError], ...]

    @property
    def succeeded(self) -> tuple[GateDecision, ...]:
        return tuple(d for d in self.decisions if d is not None)


def gate_batch(
    queries: Sequence[tuple[str, DescriptorSet]],
    predictor: PosePredictor,
    db: PoseDatabase,
    cfg: GateConfig,
    max_workers: int | None = None,
) -> BatchResult:
    """Gate a batch of (image_id, descriptors) queries.

    Decisions are element-wise identical to sequential ``gate`` calls
    (timings aside) and keep input order. Per-item domain errors are
    collected instead of aborting the batch. ``max_workers`` > 1 runs
    queries on a thread pool; the database and config are shared read-only.
    """

    def run_one(item: tuple[str, DescriptorSet]):
        image_id, descriptors = item
        try:
            return gate(image_id, descriptors, predictor, db, cfg), None
        except PoseGateError as exc:
            return None, exc

    if max_workers is not None and max_workers > 1 and len(queries) > 1:
        with ThreadPoolExecutor(max_workers=max_workers) as pool:
            outcomes = list(pool.map(run_one, queries))
    else:
        outcomes = [run_one(item) for item in queries]

    decisions = tuple(decision for decision, _ in outcomes)
    errors = tuple(
        (index, error) for index, (_, error) in enumerate(outcomes) if error is not None
    )
    return BatchResult(decisions, errors)


class FilePosePredictor:
    """Predictions read from a pose-format file, one record per query image.

    This is how any external pose regressor plugs in: run it offline, dump
    ``image_id tx ty tz qw qx qy qz`` lines, and point the gate at the file.
    Deterministic and safe for concurrent queries.
    """

    def __init__(self, path):
        self._poses: dict[str, Pose] = dict(parse_pose_records(path))
        self._source = str(path)

    def __len__(self) -> int:
        return len(self._poses)

    def predict(self, image_id: str) -> Pose:
        pose = self._poses.get(image_id)
        if pose is None:
            raise PredictionFailure(image_id, f"no record in {self._source}")
        return pose


def _stable_id_hash(image_id: str) -> int:
    return int.from_bytes(hashlib.blake2s(image_id.encode("utf-8")).digest()[:8], "little")


class SyntheticPosePredictor:
    """Noisy oracle over known ground-truth poses.

    Each prediction perturbs the true pose with Gaussian position noise
    (``sigma_pos_m`` meters) and a rotation by a Gaussian angle
    (``sigma_rot_deg`` degrees) about a random axis. With probability
    ``outlier_probability`` the prediction is instead replaced by a uniform
    pose inside the bounding box, emulating the gross failures a pose
    regressor produces on inputs it cannot generalize to. Ids listed in
    ``forced_outlier_ids`` always take the outlier path, which models
    regressors that systematically fail on queries far from the training
    distribution.

    Deterministic per (seed, image_id): every call derives its own RNG, so
    concurrent queries are safe and batch order does not matter.
    """

    def __init__(
        self,
        ground_truth: Mapping[str, Pose],
        bounding_box: tuple[np.ndarray, np.ndarray],
        sigma_pos_m: float = 0.05,
        sigma_rot_deg: float = 1.0,
        outlier_probability: float = 0.0,
        seed: int = 0,
        forced_outlier_ids: Collection[str] = (),
    ):
        if not (0.0 <= outlier_probability <= 1.0):
            raise ValueError("outlier_probability must be in [0, 1]")
        self._ground_truth = dict(ground_truth)
        lo, hi = bounding_box
        self._box_lo = np.asarray(lo, dtype=np.float64)
        self._box_hi = np.asarray(hi, dtype=np.float64)
        self._sigma_pos = float(sigma_pos_m)
        self._sigma_rot_rad = math.radians(float(sigma_rot_deg))
        self._outlier_probability = float(outlier_probability)
        self._seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._forced_outliers = frozenset(forced_outlier_ids)

    def predict(self, image_id: str) -> Pose:
        true_pose = self._ground_truth.get(image_id)
        if true_pose is None:
            raise PredictionFailure(image_id, "no ground-truth pose")
        rng = np.random.default_rng([self._seed, _stable_id_hash(image_id)])
        draw = rng.random()
        if image_id in self._forced_outliers or draw < self._outlier_probability:
            position = rng.uniform(self._box_lo, self._box_hi)
            raw = rng.normal(size=4)
            norm = float(np.linalg.norm(raw))
            orientation = raw / norm if norm > 0.0 else np.array([1.0, 0.0, 0.0, 0.0])
            return Pose(position, orientation)

        position = true_pose.position + rng.normal(0.0, self._sigma_pos, size=3)
        axis = rng.normal(size=3)
        if float(np.linalg.norm(axis)) == 0.0:
            axis = np.array([1.0, 0.0, 0.0])
        angle = rng.normal(0.0, self._sigma_rot_rad)
        wobble = quat_from_axis_angle(axis, angle)
        orientation = quat_multiply(wobble, true_pose.unit_orientation())
        return Pose(position, orientation)
