import math

import numpy as np
import pytest

from posegate import (
    GateConfig,
    MatcherConfig,
    Pose,
    PoseDatabase,
    TrainEntry,
    Verdict,
    gate,
    sample_far_pair,
    tune_gamma,
)
from posegate.features import KIND_BINARY_HAMMING, DescriptorSet
from posegate.synthetic import distinct_descriptors


def brute_force_far_pair(entries, anchor_index, d_th):
    """Naive reference for the far-pair argmax, overwrite-on->= semantics."""
    anchor = entries[anchor_index]
    far = []
    for i, entry in enumerate(entries):
        d = math.sqrt(
            sum(
                (float(a) - float(b)) ** 2
                for a, b in zip(anchor.pose.position, entry.pose.position)
            )
        )
        if d > d_th:
            far.append(i)
    if not far:
        return None
    qa = anchor.pose.orientation
    norm = math.sqrt(sum(float(c) ** 2 for c in qa))
    qa = [float(c) / norm for c in qa]
    best, best_d = None, -1.0
    for i in far:
        qr = entries[i].pose.orientation
        d = math.sqrt(sum((a - float(b)) ** 2 for a, b in zip(qa, qr)))
        if d >= best_d:
            best_d = d
            best = i
    return best


def random_db(rng, n, span=4.0):
    entries = []
    for i in range(n):
        q = rng.normal(size=4)
        q = q / np.linalg.norm(q)
        entries.append(TrainEntry(f"t/{i:03d}", Pose(rng.uniform(0, span, 3), q)))
    return PoseDatabase(entries, scene_name="rand")


def two_cluster_db(shared=7, per_cluster=4, extra=20):
    """Two camera clusters 4 m apart whose views overlap in exactly ``shared``
    landmark descriptors; everything else is cluster-private."""
    rng = np.random.default_rng(97)
    pool = distinct_descriptors(rng, shared + 2 * extra)
    shared_desc = pool[:shared]
    a_desc = pool[shared : shared + extra]
    b_desc = pool[shared + extra :]
    kp = lambda n: np.tile(np.array([[9.0, 9.0]], dtype=np.float32), (n, 1))

    entries = []
    for c in range(per_cluster):
        rows = np.vstack([shared_desc, a_desc])
        ds = DescriptorSet(f"a/{c}", kp(len(rows)), rows, KIND_BINARY_HAMMING)
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        entries.append(
            TrainEntry(f"a/{c}", Pose([0.05 * c, 0, 0], q), descriptor_ref=ds)
        )
    for c in range(per_cluster):
        rows = np.vstack([shared_desc, b_desc])
        ds = DescriptorSet(f"b/{c}", kp(len(rows)), rows, KIND_BINARY_HAMMING)
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        entries.append(
            TrainEntry(f"b/{c}", Pose([4.0 + 0.05 * c, 0, 0], q), descriptor_ref=ds)
        )
    return PoseDatabase(entries, scene_name="two-cluster")


class TestSampleFarPair:
    def test_none_when_everything_near(self):
        rng = np.random.default_rng(1)
        db = random_db(rng, 8, span=0.5)
        assert sample_far_pair(db, db.entries[0], d_th=5.0) is None

    def test_singleton_far_set(self):
        q = [1.0, 0, 0, 0]
        db = PoseDatabase(
            [
                TrainEntry("anchor", Pose([0, 0, 0], q)),
                TrainEntry("near", Pose([0.2, 0, 0], q)),
                TrainEntry("lone-far", Pose([9, 0, 0], [0, 1, 0, 0])),
            ]
        )
        pair = sample_far_pair(db, db.entries[0], d_th=1.0)
        assert pair.far_id == "lone-far"
        assert pair.position_distance > 1.0
        assert pair.good_match_count is None

    def test_matches_brute_force(self):
        rng = np.random.default_rng(13)
        for _ in range(60):
            db = random_db(rng, int(rng.integers(2, 25)))
            anchor_index = int(rng.integers(0, len(db)))
            d_th = float(rng.uniform(0.5, 3.0))
            got = sample_far_pair(db, db.entries[anchor_index], d_th)
            want = brute_force_far_pair(db.entries, anchor_index, d_th)
            if want is None:
                assert got is None
            else:
                assert db.index_of(got.far_id) == want

    def test_strictly_beyond_threshold(self):
        rng = np.random.default_rng(29)
        db = random_db(rng, 30)
        for entry in db.entries[:10]:
            pair = sample_far_pair(db, entry, d_th=1.0)
            if pair is not None:
                assert pair.position_distance > 1.0

    def test_far_set_shrinks_with_threshold(self):
        rng = np.random.default_rng(31)
        db = random_db(rng, 30)
        anchor = db.entries[0]
        small = {
            e.image_id
            for e in db.entries
            if np.linalg.norm(e.pose.position - anchor.pose.position) > 2.0
        }
        large = {
            e.image_id
            for e in db.entries
            if np.linalg.norm(e.pose.position - anchor.pose.position) > 1.0
        }
        assert small <= large


class TestTuneGamma:
    def test_no_far_partners_floor(self):
        rng = np.random.default_rng(3)
        db = random_db(rng, 6, span=0.4)
        report = tune_gamma(db, [e.image_id for e in db.entries], d_th=5.0)
        assert report.pairs == ()
        assert report.max_matches == 0
        assert report.suggested_gamma == 1

    def test_two_cluster_scene_suggests_shared_count(self):
        db = two_cluster_db(shared=7)
        anchors = [e.image_id for e in db.entries if e.image_id.startswith("a/")]
        report = tune_gamma(db, anchors, d_th=1.5)
        assert report.max_matches == 7
        assert report.suggested_gamma == 7
        assert all(p.good_match_count == 7 for p in report.pairs)

    def test_far_pair_rejected_above_suggestion(self):
        db = two_cluster_db(shared=7)
        anchors = [e.image_id for e in db.entries if e.image_id.startswith("a/")]
        report = tune_gamma(db, anchors, d_th=1.5)

        class AnchorTruth:
            def __init__(self, db):
                self.db = db

            def predict(self, image_id):
                # pretend the regressor predicted the far partner's exact pose
                return self.db.entry(image_id).pose

        for pair in report.pairs:
            cfg = GateConfig(1.5, report.suggested_gamma + 1)
            decision = gate(
                pair.far_id,
                db.descriptors_for(pair.anchor_id),
                AnchorTruth(db),
                db,
                cfg,
            )
            assert decision.verdict is not Verdict.KEYFRAME

    def test_report_json_schema(self):
        db = two_cluster_db(shared=5)
        anchors = [db.entries[0].image_id]
        report = tune_gamma(db, anchors, d_th=1.5, matcher=MatcherConfig(ratio=0.5))
        payload = report.to_json_dict()
        assert payload["scene"] == "two-cluster"
        assert payload["ratio"] == 0.5
        assert payload["max_matches"] == payload["pairs"][0]["matches"]
        assert set(payload["pairs"][0]) == {"anchor", "far", "dist_pos", "dist_ori", "matches"}

    def test_unknown_anchor_raises(self):
        db = two_cluster_db()
        with pytest.raises(KeyError):
            tune_gamma(db, ["ghost"], d_th=1.0)
