"""Gamma calibration from far training pairs.

The match threshold should sit just above the number of good matches that
*unrelated* views of the scene can produce. For each anchor image (usually
one training sequence) the tuner finds the training image that is beyond
the position threshold and maximally different in orientation, counts their
good matches, and suggests the maximum count over all pairs as the gating
threshold. The CLI prints the full match-count distribution so the value
can be nudged by hand.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .database import PoseDatabase, TrainEntry
from .features import MatcherConfig, match_features
from .pose import DistanceConfig

__all__ = ["FarPair", "TuneReport", "sample_far_pair", "tune_gamma"]


@dataclass(frozen=True)
class FarPair:
    """An anchor image paired with its most-different far training image."""

    anchor_id: str
    far_id: str
    position_distance: float
    orientation_distance: float
    good_match_count: int | None = None


@dataclass(frozen=True, eq=False)
class TuneReport:
    scene: str
    d_th: float
    ratio: float
    pairs: tuple[FarPair, ...]
    max_matches: int
    suggested_gamma: int

    def to_json_dict(self) -> dict:
        return {
            "scene": self.scene,
            "d_th": self.d_th,
            "ratio": self.ratio,
            "pairs": [
                {
                    "anchor": pair.anchor_id,
                    "far": pair.far_id,
                    "dist_pos": pair.position_distance,
                    "dist_ori": pair.orientation_distance,
                    "matches": pair.good_match_count,
                }
                for pair in self.pairs
            ],
            "max_matches": self.max_matches,
            "suggested_gamma": self.suggested_gamma,
        }


def sample_far_pair(
    db: PoseDatabase,
    anchor: TrainEntry,
    d_th: float,
    cfg: DistanceConfig = DistanceConfig(),
) -> FarPair | None:
    """Pair an anchor with the far entry of largest orientation distance.

    Far candidates are entries strictly beyond ``d_th`` meters of the anchor
    (the complement of the retrieval candidate set); among them the largest
    orientation distance wins, ties resolving to the last qualifying entry
    in database order. Returns None when nothing is far enough. The match
    count is left unfilled.
    """
    if not (d_th > 0.0):
        raise ValueError(f"d_th must be positive, got {d_th}")
    deltas = db.positions - anchor.pose.position
    pos_dist = np.sqrt(np.sum(deltas * deltas, axis=1))
    far = np.nonzero(pos_dist > d_th)[0]
    if far.size == 0:
        return None

    unit_q = anchor.pose.unit_orientation()
    refs = db.orientations[far]
    diff = refs - unit_q
    ori_dist = np.sqrt(np.sum(diff * diff, axis=1))
    if cfg.sign_invariant_orientation:
        flipped = refs + unit_q
        ori_dist = np.minimum(ori_dist, np.sqrt(np.sum(flipped * flipped, axis=1)))

    # Last index attaining the maximum: a sequential scan that overwrites on >=.
    last_max = ori_dist.size - 1 - int(np.argmax(ori_dist[::-1]))
    chosen = int(far[last_max])
    return FarPair(
        anchor_id=anchor.image_id,
        far_id=db.entries[chosen].image_id,
        position_distance=float(pos_dist[chosen]),
        orientation_distance=float(ori_dist[last_max]),
    )


def tune_gamma(
    db: PoseDatabase,
    anchor_ids: Sequence[str],
    d_th: float,
    matcher: MatcherConfig = MatcherConfig(),
    distance: DistanceConfig = DistanceConfig(),
) -> TuneReport:
    """Suggest a gating threshold from the far pairs of the given anchors.

    Anchors without a far partner contribute no pair. The suggestion is
    max(1, max good-match count over all pairs); raising it by one would
    reject every sampled far pair.
    """
    pairs: list[FarPair] = []
    for anchor_id in anchor_ids:
        anchor = db.entry(anchor_id)
        pair = sample_far_pair(db, anchor, d_th, distance)
        if pair is None:
            continue
        report = match_features(
            db.descriptors_for(anchor), db.descriptors_for(pair.far_id), matcher
        )
        pairs.append(replace(pair, good_match_count=report.good_match_count))

    max_matches = max((pair.good_match_count for pair in pairs), default=0)
    return TuneReport(
        scene=db.scene_name,
        d_th=float(d_th),
        ratio=matcher.ratio,
        pairs=tuple(pairs),
        max_matches=max_matches,
        suggested_gamma=max(1, max_matches),
    )
