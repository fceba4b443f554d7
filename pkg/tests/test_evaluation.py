import math

import numpy as np
import pytest

from posegate import (
    AccuracyTiers,
    GateDecision,
    MissingGroundTruth,
    Pose,
    SceneMismatch,
    Verdict,
    bench,
    compare_runs,
    evaluate,
    lower_median,
    nearest_rank,
    position_distance,
    rotation_error_degrees,
)
from posegate.pose import quat_from_axis_angle


def decision(image_id, predicted, verdict=Verdict.KEYFRAME, timings=None):
    return GateDecision(
        image_id=image_id,
        verdict=verdict,
        predicted_pose=predicted,
        retrieved_image_id="train/x" if verdict is not Verdict.REJECTED_NO_CANDIDATE else None,
        good_match_count=10 if verdict is Verdict.KEYFRAME else None,
        timings_us=timings or {"predict": 100, "retrieve": 50},
    )


def pose_with_errors(base, pos_error_m, ori_error_deg, direction=(1.0, 0.0, 0.0)):
    axis = np.array([0.0, 0.0, 1.0])
    q = quat_from_axis_angle(axis, math.radians(ori_error_deg))
    return Pose(base.position + pos_error_m * np.asarray(direction), q)


IDENTITY = Pose.identity()


def recount_oracle(decisions, truth, tiers, gated):
    """Independent full-sort recount of the evaluation aggregates."""
    population = [d for d in decisions if (not gated) or d.verdict is Verdict.KEYFRAME]
    errors = [
        (
            position_distance(d.predicted_pose, truth[d.image_id]),
            rotation_error_degrees(d.predicted_pose, truth[d.image_id]),
        )
        for d in population
    ]

    def median(vals):
        if not vals:
            return math.nan
        vals = sorted(vals)
        middle = (len(vals) - 1) // 2
        return vals[middle]

    def pct(bound):
        if not errors:
            return 0.0
        return 100.0 * sum(1 for p, o in errors if p <= bound[0] and o <= bound[1]) / len(errors)

    return {
        "median_pos": median([p for p, _ in errors]),
        "median_ori": median([o for _, o in errors]),
        "pcts": (pct(tiers.high), pct(tiers.medium), pct(tiers.low)),
    }


class TestTiers:
    def test_defaults(self):
        tiers = AccuracyTiers()
        assert tiers.high == (0.25, 2.0)
        assert tiers.medium == (0.5, 5.0)
        assert tiers.low == (5.0, 10.0)

    def test_non_nested_rejected(self):
        with pytest.raises(ValueError):
            AccuracyTiers(high=(0.6, 2.0))
        with pytest.raises(ValueError):
            AccuracyTiers(medium=(0.5, 11.0))


class TestMedians:
    def test_lower_median_even(self):
        assert lower_median([4.0, 1.0, 3.0, 2.0]) == 2.0

    def test_lower_median_odd(self):
        assert lower_median([5.0, 1.0, 9.0]) == 5.0

    def test_empty_is_nan(self):
        assert math.isnan(lower_median([]))

    def test_nearest_rank(self):
        values = list(range(1, 101))
        assert nearest_rank(values, 0.50) == 50
        assert nearest_rank(values, 0.95) == 95
        assert nearest_rank([7.0], 0.95) == 7.0


class TestEvaluate:
    def test_perfect_predictions(self):
        truth = {"a": IDENTITY, "b": Pose([1, 1, 1], [1, 0, 0, 0])}
        decisions = [decision("a", truth["a"]), decision("b", truth["b"])]
        report = evaluate(decisions, truth, gated=True, scene="s")
        assert report.median_pos_m == 0.0
        assert report.median_ori_deg == 0.0
        assert (report.pct_high, report.pct_medium, report.pct_low) == (100.0, 100.0, 100.0)
        assert report.keyframe_ratio == 1.0

    def test_medium_not_high_example(self):
        # (0.3 m, 1 deg): position misses the high tier, orientation does not
        truth = {"a": IDENTITY}
        predicted = pose_with_errors(IDENTITY, 0.3, 1.0)
        report = evaluate([decision("a", predicted)], truth, gated=True)
        assert report.pct_high == 0.0
        assert report.pct_medium == 100.0
        assert report.pct_low == 100.0

    def test_both_bounds_required(self):
        truth = {"a": IDENTITY}
        predicted = pose_with_errors(IDENTITY, 0.1, 4.0)  # tight position, loose angle
        report = evaluate([decision("a", predicted)], truth, gated=True)
        assert report.pct_high == 0.0
        assert report.pct_medium == 100.0

    def test_gated_restricts_population(self):
        truth = {"good": IDENTITY, "bad": IDENTITY}
        decisions = [
            decision("good", pose_with_errors(IDENTITY, 0.01, 0.1)),
            decision(
                "bad",
                pose_with_errors(IDENTITY, 3.0, 30.0),
                verdict=Verdict.REJECTED_NO_CANDIDATE,
            ),
        ]
        gated = evaluate(decisions, truth, gated=True)
        ungated = evaluate(decisions, truth, gated=False)
        assert gated.n_total == ungated.n_total == 2
        assert gated.n_keyframes == 1
        assert gated.median_pos_m < ungated.median_pos_m or ungated.median_pos_m >= 0.01
        assert gated.keyframe_ratio == 0.5

    def test_missing_ground_truth(self):
        with pytest.raises(MissingGroundTruth):
            evaluate([decision("a", IDENTITY)], {}, gated=True)

    def test_matches_recount_oracle_on_random_sets(self):
        rng = np.random.default_rng(15)
        tiers = AccuracyTiers()
        for _ in range(25):
            truth = {}
            decisions = []
            for i in range(int(rng.integers(1, 40))):
                name = f"q{i}"
                truth[name] = IDENTITY
                verdict = (
                    Verdict.KEYFRAME if rng.random() < 0.6 else Verdict.REJECTED_NO_CANDIDATE
                )
                predicted = pose_with_errors(
                    IDENTITY, float(rng.uniform(0, 1.0)), float(rng.uniform(0, 12.0))
                )
                decisions.append(decision(name, predicted, verdict=verdict))
            for gated in (True, False):
                report = evaluate(decisions, truth, tiers, gated=gated)
                oracle = recount_oracle(decisions, truth, tiers, gated)
                if math.isnan(oracle["median_pos"]):
                    assert math.isnan(report.median_pos_m)
                else:
                    assert report.median_pos_m == oracle["median_pos"]
                    assert report.median_ori_deg == oracle["median_ori"]
                assert (report.pct_high, report.pct_medium, report.pct_low) == oracle["pcts"]
                assert report.pct_high <= report.pct_medium <= report.pct_low

    def test_latency_summary_per_stage(self):
        truth = {"a": IDENTITY, "b": IDENTITY}
        decisions = [
            decision("a", IDENTITY, timings={"predict": 100, "retrieve": 10}),
            decision(
                "b", IDENTITY, timings={"predict": 200, "retrieve": 30, "match": 500}
            ),
        ]
        report = evaluate(decisions, truth, gated=False)
        assert report.per_stage_latency_us["predict"] == {"p50": 100, "p95": 200, "max": 200}
        assert report.per_stage_latency_us["match"]["max"] == 500
        assert "extract" not in report.per_stage_latency_us


class TestCompareRuns:
    def _report(self, scene="s", **overrides):
        truth = {"a": IDENTITY}
        base = evaluate([decision("a", IDENTITY)], truth, gated=False, scene=scene)
        if not overrides:
            return base
        from dataclasses import replace

        return replace(base, **overrides)

    def test_identical_reports_zero_deltas(self):
        table = compare_runs(self._report(), self._report())
        for row in table["metrics"].values():
            assert row.get("delta", row.get("delta_points")) == 0.0

    def test_point_deltas(self):
        ungated = self._report(pct_high=67.9, pct_medium=95.6, pct_low=98.1)
        gated = self._report(pct_high=78.8, pct_medium=99.0, pct_low=99.8)
        table = compare_runs(ungated, gated)
        assert table["metrics"]["pct_high"]["delta_points"] == pytest.approx(10.9)

    def test_improvement_percent(self):
        ungated = self._report(median_pos_m=0.10)
        gated = self._report(median_pos_m=0.08)
        table = compare_runs(ungated, gated)
        assert table["metrics"]["median_pos_m"]["improvement_pct"] == pytest.approx(20.0)

    def test_scene_mismatch(self):
        with pytest.raises(SceneMismatch):
            compare_runs(self._report(scene="a"), self._report(scene="b"))


class TestBench:
    def test_smoke(self):
        report = bench(db_size=50, n_descriptors=32, repetitions=5, seed=1)
        assert report.retrieval_us["p50"] >= 0
        assert report.match_us["p95"] >= report.match_us["p50"] >= 0
        assert report.combined_us["max"] >= report.combined_us["p95"]
        payload = report.to_json_dict()
        assert set(payload) == {
            "db_size", "n_descriptors", "repetitions",
            "retrieval_us", "match_us", "combined_us",
        }

    def test_single_entry_db_fast(self):
        report = bench(db_size=1, n_descriptors=4, repetitions=10, seed=2)
        # a single comparison: well under a millisecond even on slow machines
        assert report.retrieval_us["p50"] < 1000

    def test_validation(self):
        with pytest.raises(ValueError):
            bench(0, 10, 5)
