"""Evaluation metrics, gated-vs-ungated comparison, and latency benchmarks.

Accuracy is reported as median position/orientation errors plus the
fraction of frames inside three nested (position, orientation) threshold
pairs. Gated reports restrict the error population to accepted keyframes
and always carry the keyframe ratio so the coverage cost stays visible.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .database import PoseDatabase, TrainEntry, retrieve_image
from .errors import MissingGroundTruth, SceneMismatch
from .features import (
    KIND_REAL_L2,
    DescriptorSet,
    MatcherConfig,
    match_features,
)
from .gate import GateDecision, Verdict
from .pose import Pose, position_distance, rotation_error_degrees


@dataclass(frozen=True)
class AccuracyTiers:
    """Nested (position m, orientation deg) accuracy buckets.

    A frame counts in a tier only when both its position and orientation
    errors are within the tier's pair, so the three percentages are
    monotone by construction.
    """

    high: tuple[float, float] = (0.25, 2.0)
    medium: tuple[float, float] = (0.5, 5.0)
    low: tuple[float, float] = (5.0, 10.0)

    def __post_init__(self):
        ordered = (self.high, self.medium, self.low)
        for tighter, looser in zip(ordered, ordered[1:]):
            if not (tighter[0] < looser[0] and tighter[1] < looser[1]):
                raise ValueError("accuracy tiers must be strictly nested")


@dataclass(frozen=True, eq=False)
class EvalReport:
    """Aggregate metrics for one run over one query set."""

    scene: str
    gated: bool
    n_total: int
    n_keyframes: int
    keyframe_ratio: float
    median_pos_m: float
    median_ori_deg: float
    pct_high: float
    pct_medium: float
    pct_low: float
    per_stage_latency_us: dict[str, dict[str, int]]

    def to_json_dict(self) -> dict:
        return {
            "scene": self.scene,
            "gated": self.gated,
            "n_total": self.n_total,
            "n_keyframes": self.n_keyframes,
            "keyframe_ratio": self.keyframe_ratio,
            "median_pos_m": self.median_pos_m,
            "median_ori_deg": self.median_ori_deg,
            "pct_high": self.pct_high,
            "pct_medium": self.pct_medium,
            "pct_low": self.pct_low,
            "per_stage_latency_us": self.per_stage_latency_us,
        }


def lower_median(values: Sequence[float]) -> float:
    """Deterministic median: the lower of the two central values for even counts."""
    if not values:
        return math.nan
    ordered = sorted(values)
    return ordered[(len(ordered) - 1) // 2]


def nearest_rank(values: Sequence[float], quantile: float) -> float:
    """Nearest-rank quantile over a non-empty sequence."""
    ordered = sorted(values)
    rank = max(1, math.ceil(quantile * len(ordered)))
    return ordered[min(rank, len(ordered)) - 1]


_STAGES = ("predict", "retrieve", "extract", "match")


def _latency_summary(decisions: Sequence[GateDecision]) -> dict[str, dict[str, int]]:
    summary: dict[str, dict[str, int]] = {}
    for stage in _STAGES:
        samples = [d.timings_us[stage] for d in decisions if stage in d.timings_us]
        if not samples:
            continue
        summary[stage] = {
            "p50": int(nearest_rank(samples, 0.50)),
            "p95": int(nearest_rank(samples, 0.95)),
            "max": int(max(samples)),
        }
    return summary


def evaluate(
    decisions: Sequence[GateDecision],
    ground_truth: Mapping[str, Pose],
    tiers: AccuracyTiers = AccuracyTiers(),
    gated: bool = True,
    scene: str = "",
) -> EvalReport:
    """Score a run: medians, tier percentages, keyframe ratio, stage latencies.

    With ``gated`` the error population is the keyframes only; otherwise all
    decisions count (the raw-predictor baseline). Every decision needs a
    ground-truth pose. Empty populations produce NaN medians and zero
    percentages.
    """
    for decision in decisions:
        if decision.image_id not in ground_truth:
            raise MissingGroundTruth(decision.image_id)

    n_total = len(decisions)
    keyframes = [d for d in decisions if d.verdict is Verdict.KEYFRAME]
    population = keyframes if gated else list(decisions)

    pos_errors = []
    ori_errors = []
    for decision in population:
        truth = ground_truth[decision.image_id]
        pos_errors.append(position_distance(decision.predicted_pose, truth))
        ori_errors.append(rotation_error_degrees(decision.predicted_pose, truth))

    def tier_pct(bound: tuple[float, float]) -> float:
        if not population:
            return 0.0
        hits = sum(
            1
            for pos, ori in zip(pos_errors, ori_errors)
            if pos <= bound[0] and ori <= bound[1]
        )
        return 100.0 * hits / len(population)

    return EvalReport(
        scene=scene,
        gated=gated,
        n_total=n_total,
        n_keyframes=len(keyframes),
        keyframe_ratio=(len(keyframes) / n_total) if n_total else 0.0,
        median_pos_m=lower_median(pos_errors),
        median_ori_deg=lower_median(ori_errors),
        pct_high=tier_pct(tiers.high),
        pct_medium=tier_pct(tiers.medium),
        pct_low=tier_pct(tiers.low),
        per_stage_latency_us=_latency_summary(decisions),
    )


def compare_runs(ungated: EvalReport, gated: EvalReport) -> dict:
    """Per-metric deltas between an ungated baseline and a gated run.

    Error metrics report (gated - ungated) deltas plus percent improvement
    (positive = gating helped); tier percentages report point deltas.
    """
    if ungated.scene != gated.scene or ungated.n_total != gated.n_total:
        raise SceneMismatch(
            f"cannot compare scene {ungated.scene!r} ({ungated.n_total} queries) "
            f"with scene {gated.scene!r} ({gated.n_total} queries)"
        )

    def error_row(name: str) -> dict:
        before = getattr(ungated, name)
        after = getattr(gated, name)
        row = {"ungated": before, "gated": after, "delta": after - before}
        row["improvement_pct"] = (
            100.0 * (before - after) / before if before > 0 else math.nan
        )
        return row

    def pct_row(name: str) -> dict:
        before = getattr(ungated, name)
        after = getattr(gated, name)
        return {"ungated": before, "gated": after, "delta_points": after - before}

    return {
        "scene": gated.scene,
        "n_total": gated.n_total,
        "keyframe_ratio": gated.keyframe_ratio,
        "metrics": {
            "median_pos_m": error_row("median_pos_m"),
            "median_ori_deg": error_row("median_ori_deg"),
            "pct_high": pct_row("pct_high"),
            "pct_medium": pct_row("pct_medium"),
            "pct_low": pct_row("pct_low"),
        },
    }


@dataclass(frozen=True, eq=False)
class BenchReport:
    """Wall-clock latency percentiles for the two hot pipeline stages."""

    db_size: int
    n_descriptors: int
    repetitions: int
    retrieval_us: dict[str, int]
    match_us: dict[str, int]
    combined_us: dict[str, int]

    def to_json_dict(self) -> dict:
        return {
            "db_size": self.db_size,
            "n_descriptors": self.n_descriptors,
            "repetitions": self.repetitions,
            "retrieval_us": self.retrieval_us,
            "match_us": self.match_us,
            "combined_us": self.combined_us,
        }


def _percentiles(samples_us: Sequence[float]) -> dict[str, int]:
    return {
        "p50": int(nearest_rank(samples_us, 0.50)),
        "p95": int(nearest_rank(samples_us, 0.95)),
        "max": int(max(samples_us)),
    }


def bench(
    db_size: int,
    n_descriptors: int,
    repetitions: int = 50,
    seed: int = 0,
    descriptor_dim: int = 128,
) -> BenchReport:
    """Measure retrieval over a ``db_size`` database and brute-force matching
    of two ``n_descriptors`` x ``descriptor_dim`` real descriptor sets.

    Each repetition times one retrieval and one matching call back to back;
    ``combined_us`` summarizes their per-repetition sum.
    """
    if db_size < 1 or n_descriptors < 1 or repetitions < 1:
        raise ValueError("db_size, n_descriptors, and repetitions must be >= 1")

    rng = np.random.default_rng(seed)
    box = 10.0
    entries = []
    for i in range(db_size):
        raw = rng.normal(size=4)
        entries.append(
            TrainEntry(
                f"bench/{i:05d}",
                Pose(rng.uniform(0.0, box, size=3), raw / np.linalg.norm(raw)),
            )
        )
    db = PoseDatabase(entries, scene_name="bench")

    def random_pose() -> Pose:
        raw = rng.normal(size=4)
        return Pose(rng.uniform(0.0, box, size=3), raw / np.linalg.norm(raw))

    def descriptor_set(name: str) -> DescriptorSet:
        data = rng.normal(size=(n_descriptors, descriptor_dim)).astype(np.float32)
        keypoints = rng.uniform(0.0, 379.0, size=(n_descriptors, 2)).astype(np.float32)
        return DescriptorSet(name, keypoints, data, KIND_REAL_L2)

    query_set = descriptor_set("bench/query")
    train_set = descriptor_set("bench/train")
    matcher = MatcherConfig()
    d_th = 2.0

    # Warm-up covers first-touch overheads (BLAS thread pools, allocator).
    for _ in range(3):
        retrieve_image(db, random_pose(), d_th)
        match_features(query_set, train_set, matcher)

    retrieval_us: list[float] = []
    match_us: list[float] = []
    combined_us: list[float] = []
    for _ in range(repetitions):
        pose = random_pose()
        t0 = time.perf_counter_ns()
        retrieve_image(db, pose, d_th)
        t1 = time.perf_counter_ns()
        match_features(query_set, train_set, matcher)
        t2 = time.perf_counter_ns()
        retrieval_us.append((t1 - t0) / 1000.0)
        match_us.append((t2 - t1) / 1000.0)
        combined_us.append((t2 - t0) / 1000.0)

    return BenchReport(
        db_size=db_size,
        n_descriptors=n_descriptors,
        repetitions=repetitions,
        retrieval_us=_percentiles(retrieval_us),
        match_us=_percentiles(match_us),
        combined_us=_percentiles(combined_us),
    )
