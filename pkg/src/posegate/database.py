"""Training-set pose database, pose-file I/O, and pose-only image retrieval.

Retrieval is feature-less: given a predicted pose it scans the database
once, keeps every entry within the position threshold, and returns the
candidate with the smallest orientation distance. The scan is O(n) and fast
enough (tens of microseconds at a thousand entries) that no spatial index
is needed.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable

import numpy as np

from .errors import DuplicateImageId, NonUnitQuaternion, ParseError
from .features import DescriptorSet, DescriptorStore, MatcherConfig, match_features
from .pose import DistanceConfig, Pose, position_distance

# Ground-truth quaternions further than this from unit norm indicate a
# malformed file (typically swapped columns), not numerical drift.
UNIT_NORM_TOLERANCE = 0.05


@dataclass(frozen=True, eq=False)
class TrainEntry:
    """One training image: id, ground-truth pose, optional cached descriptors."""

    image_id: str
    pose: Pose
    descriptor_ref: DescriptorSet | None = None


class PoseDatabase:
    """Ordered, immutable collection of training entries.

    Entry order is deterministic and equals ingestion (file) order; retrieval
    tie-breaking depends on it. Ground-truth orientations are validated to be
    near unit norm and renormalized on construction. Concurrent retrievals
    are safe.
    """

    def __init__(
        self,
        entries: Iterable[TrainEntry],
        scene_name: str = "",
        descriptors: DescriptorStore | None = None,
    ):
        entries = list(entries)
        seen: set[str] = set()
        for entry in entries:
            if entry.image_id in seen:
                raise DuplicateImageId(entry.image_id)
            seen.add(entry.image_id)

        n = len(entries)
        positions = np.empty((n, 3))
        orientations = np.empty((n, 4))
        for i, entry in enumerate(entries):
            positions[i] = entry.pose.position
            orientations[i] = entry.pose.orientation

        norms = np.sqrt(np.sum(orientations * orientations, axis=1))
        off_unit = np.abs(norms - 1.0) > UNIT_NORM_TOLERANCE
        if off_unit.any():
            index = int(np.argmax(off_unit))
            raise NonUnitQuaternion(
                f"orientation norm {norms[index]:.4f} for image "
                f"{entries[index].image_id!r} deviates from 1 by more than "
                f"{UNIT_NORM_TOLERANCE}"
            )
        # Renormalize, skipping rows already unit so re-ingesting a written
        # database reproduces identical bits.
        drifted = np.abs(norms * norms - 1.0) > 1e-12
        if drifted.any():
            orientations[drifted] /= norms[drifted, None]
        positions.flags.writeable = False
        orientations.flags.writeable = False
        for i in np.nonzero(drifted)[0]:
            entries[i] = replace(
                entries[i],
                pose=Pose._from_validated(entries[i].pose.position, orientations[i]),
            )

        self._entries = tuple(entries)
        self._scene_name = scene_name
        self._descriptors = descriptors if descriptors is not None else DescriptorStore()
        self._positions = positions
        self._orientations = orientations
        self._index = {entry.image_id: i for i, entry in enumerate(self._entries)}

    @property
    def entries(self) -> tuple[TrainEntry, ...]:
        return self._entries

    @property
    def scene_name(self) -> str:
        return self._scene_name

    @property
    def positions(self) -> np.ndarray:
        """(N, 3) float64 view of all entry positions, in entry order."""
        return self._positions

    @property
    def orientations(self) -> np.ndarray:
        """(N, 4) float64 view of all unit orientations, in entry order."""
        return self._orientations

    @property
    def descriptor_store(self) -> DescriptorStore:
        return self._descriptors

    def __len__(self) -> int:
        return len(self._entries)

    def index_of(self, image_id: str) -> int:
        return self._index[image_id]

    def entry(self, image_id: str) -> TrainEntry:
        return self._entries[self._index[image_id]]

    def descriptors_for(self, entry: TrainEntry | str) -> DescriptorSet:
        """Descriptors attached to an entry, falling back to the cache store."""
        if isinstance(entry, str):
            entry = self.entry(entry)
        if entry.descriptor_ref is not None:
            return entry.descriptor_ref
        return self._descriptors.get(entry.image_id)


def parse_pose_records(path: str | Path) -> list[tuple[str, Pose]]:
    """Parse a pose file into (image_id, pose) records, preserving file order.

    Format: one ``image_id tx ty tz qw qx qy qz`` record per line,
    whitespace-separated; ``#`` lines are comments, blank lines are skipped.
    Positions are meters, quaternions scalar-first (w, x, y, z). Quaternions
    may have any positive norm here (prediction files carry raw regressor
    outputs); database ingestion separately enforces near-unit ground truth.
    """
    path = Path(path)
    ids: list[str] = []
    rows: list[tuple[float, ...]] = []
    line_nos: list[int] = []
    seen: set[str] = set()
    with path.open("r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            tokens = stripped.split()
            if len(tokens) != 8:
                raise ParseError(
                    str(path), line_no, f"expected 8 fields, got {len(tokens)}"
                )
            image_id = tokens[0]
            try:
                values = tuple(float(token) for token in tokens[1:])
            except ValueError as exc:
                raise ParseError(str(path), line_no, f"bad number: {exc}") from None
            if image_id in seen:
                raise DuplicateImageId(image_id)
            seen.add(image_id)
            ids.append(image_id)
            rows.append(values)
            line_nos.append(line_no)

    if not rows:
        return []
    matrix = np.array(rows, dtype=np.float64)
    finite = np.isfinite(matrix).all(axis=1)
    if not finite.all():
        index = int(np.argmin(finite))
        raise ParseError(str(path), line_nos[index], "non-finite pose component")
    zero_norm = (matrix[:, 3:] == 0.0).all(axis=1)
    if zero_norm.any():
        index = int(np.argmax(zero_norm))
        raise ParseError(str(path), line_nos[index], "zero-norm quaternion")
    matrix.flags.writeable = False
    return [
        (image_id, Pose._from_validated(matrix[i, :3], matrix[i, 3:]))
        for i, image_id in enumerate(ids)
    ]


def ingest_pose_file(
    path: str | Path,
    scene_name: str | None = None,
    descriptors: DescriptorStore | None = None,
) -> PoseDatabase:
    """Build a database from a pose file; entry order equals file order."""
    path = Path(path)
    records = parse_pose_records(path)
    entries = [TrainEntry(image_id, pose) for image_id, pose in records]
    return PoseDatabase(
        entries,
        scene_name=scene_name if scene_name is not None else path.stem,
        descriptors=descriptors,
    )


def write_pose_file(
    records: Iterable[tuple[str, Pose]] | PoseDatabase, path: str | Path
) -> None:
    """Write pose records in the pose-file format with round-trip-exact floats."""
    if isinstance(records, PoseDatabase):
        records = [(entry.image_id, entry.pose) for entry in records.entries]
    lines = []
    for image_id, pose in records:
        numbers = " ".join(repr(value) for value in pose.components())
        lines.append(f"{image_id} {numbers}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass(frozen=True)
class RetrievalResult:
    """Outcome of one retrieval: either no candidate, or the chosen entry."""

    entry_index: int | None = None
    image_id: str | None = None
    orientation_distance: float | None = None

    @property
    def found(self) -> bool:
        return self.entry_index is not None


NO_CANDIDATE = RetrievalResult()


@dataclass
class RetrievalStats:
    """Counters for how much work a retrieval performed."""

    position_evaluations: int = 0
    orientation_evaluations: int = 0


def retrieve_image(
    db: PoseDatabase,
    predicted: Pose,
    d_th: float,
    cfg: DistanceConfig = DistanceConfig(),
    stats: RetrievalStats | None = None,
) -> RetrievalResult:
    """Retrieve the training entry closest to a predicted pose.

    One pass computes all N position distances; entries within ``d_th``
    meters form the candidate set. If it is empty the result is
    NO_CANDIDATE; otherwise the candidate minimizing the orientation
    distance wins, with ties at the minimum resolved to the last qualifying
    entry in database order.
    """
    if not (d_th > 0.0):
        raise ValueError(f"d_th must be positive, got {d_th}")
    if len(db) == 0:
        return NO_CANDIDATE

    deltas = db.positions - predicted.position
    pos_dist = np.sqrt(np.sum(deltas * deltas, axis=1))
    if stats is not None:
        stats.position_evaluations += len(db)

    candidates = np.nonzero(pos_dist <= d_th)[0]
    if candidates.size == 0:
        return NO_CANDIDATE

    unit_q = predicted.unit_orientation()
    refs = db.orientations[candidates]
    diff = refs - unit_q
    ori_dist = np.sqrt(np.sum(diff * diff, axis=1))
    if cfg.sign_invariant_orientation:
        flipped = refs + unit_q
        ori_dist = np.minimum(ori_dist, np.sqrt(np.sum(flipped * flipped, axis=1)))
    if stats is not None:
        stats.orientation_evaluations += int(candidates.size)

    # Last index attaining the minimum, matching a sequential scan that
    # overwrites the best candidate on <=.
    last_min = ori_dist.size - 1 - int(np.argmin(ori_dist[::-1]))
    best = int(candidates[last_min])
    return RetrievalResult(best, db.entries[best].image_id, float(ori_dist[last_min]))


def similarity(
    db: PoseDatabase,
    query_descriptors: DescriptorSet,
    predicted: Pose,
    candidate: TrainEntry,
    d_th: float,
    matcher: MatcherConfig = MatcherConfig(),
    distance: DistanceConfig = DistanceConfig(),
) -> int:
    """Similarity of a database candidate to the query, as a good-match count.

    Sequential three-part measure: 0 if the candidate is beyond ``d_th`` of
    the predicted position; 0 if it is not the retrieval winner among
    in-range entries; otherwise the number of good feature matches between
    the query and the candidate.
    """
    if db.entry(candidate.image_id) is not candidate:
        raise ValueError(f"candidate {candidate.image_id!r} does not belong to the database")
    if position_distance_to(predicted, candidate) > d_th:
        return 0
    winner = retrieve_image(db, predicted, d_th, distance)
    if not winner.found or winner.image_id != candidate.image_id:
        return 0
    train_descriptors = db.descriptors_for(candidate)
    return match_features(query_descriptors, train_descriptors, matcher).good_match_count


def position_distance_to(predicted: Pose, entry: TrainEntry) -> float:
    return position_distance(predicted, entry.pose)
