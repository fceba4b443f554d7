"""``posegate`` command-line interface.

Subcommands: build-db, tune-gamma, gate, evaluate, synth, bench. Reports go
to ``--out`` as JSON (or stdout), human-readable summaries to stderr, and
per-query decision logs to stdout as JSON lines. Exit codes: 0 success,
2 parse/config error, 3 missing data.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .database import (
    PoseDatabase,
    ingest_pose_file,
    parse_pose_records,
    write_pose_file,
)
from .errors import (
    DecodeError,
    DescriptorCollision,
    DuplicateImageId,
    MissingDescriptors,
    MissingGroundTruth,
    NonUnitQuaternion,
    ParseError,
    PredictionFailure,
)
from .evaluation import AccuracyTiers, bench, compare_runs, evaluate
from .features import DescriptorStore, MatcherConfig
from .gate import FilePosePredictor, GateConfig, SyntheticPosePredictor, gate, gate_batch
from .pose import Pose
from .synthetic import dump_split, generate_scene, generate_split
from .tuning import tune_gamma

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING_DATA = 3

_CONFIG_ERRORS = (ParseError, DuplicateImageId, NonUnitQuaternion, DecodeError,
                  DescriptorCollision, ValueError)
_DATA_ERRORS = (MissingDescriptors, MissingGroundTruth, PredictionFailure,
                FileNotFoundError, IsADirectoryError, KeyError)

_DB_META = "meta.json"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="posegate",
        description="Keyframe gating for pose regressors: pose-only retrieval "
        "plus feature-match verification.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-db", help="validate a pose file into a database directory")
    p.add_argument("--poses", required=True, help="pose file (image_id tx ty tz qw qx qy qz)")
    p.add_argument("--descriptors", help="directory of .pgdc descriptor caches")
    p.add_argument("--scene", help="scene name (default: pose file stem)")
    p.add_argument("--out", required=True, help="database directory to create")

    p = sub.add_parser("tune-gamma", help="suggest a match threshold from far training pairs")
    p.add_argument("--db", required=True)
    p.add_argument("--anchors", required=True, help="file with one anchor image id per line")
    p.add_argument("--dth", type=float, required=True, help="position threshold in meters")
    p.add_argument("--ratio", type=float, default=0.7)
    p.add_argument("--out", help="report JSON path (default: stdout)")

    p = sub.add_parser("gate", help="gate a single query image")
    p.add_argument("--db", required=True)
    p.add_argument("--query", required=True, help="query image id")
    p.add_argument("--pred", required=True,
                   help="pose file with predictions, or synthetic:SIGMA_POS,SIGMA_ROT,P_OUT,SEED")
    p.add_argument("--dth", type=float, required=True)
    p.add_argument("--gamma", type=int, required=True)
    p.add_argument("--ratio", type=float, default=0.7)

    p = sub.add_parser("evaluate", help="gate a query set and report accuracy metrics")
    p.add_argument("--db", required=True)
    p.add_argument("--queries", required=True, help="pose file with query ground truth")
    p.add_argument("--pred", required=True,
                   help="pose file with predictions, or synthetic:SIGMA_POS,SIGMA_ROT,P_OUT,SEED")
    p.add_argument("--dth", type=float, required=True)
    p.add_argument("--gamma", type=int, required=True)
    p.add_argument("--ratio", type=float, default=0.7)
    p.add_argument("--ungated-baseline", action="store_true",
                   help="also report ungated metrics and the comparison table")
    p.add_argument("--out", help="report JSON path (default: stdout)")

    p = sub.add_parser("synth", help="generate a synthetic scene split on disk")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--landmarks", type=int, required=True)
    p.add_argument("--train", type=int, required=True)
    p.add_argument("--test", type=int, required=True)
    p.add_argument("--bias", type=float, required=True,
                   help="fraction of test poses sampled outside the training region")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("bench", help="measure retrieval and matching latency")
    p.add_argument("--db-size", type=int, required=True)
    p.add_argument("--descriptors", type=int, required=True)
    p.add_argument("--reps", type=int, default=50)
    p.add_argument("--out", help="report JSON path (default: stdout)")

    return parser


def _load_db(path_arg: str) -> PoseDatabase:
    """Load a database directory (meta.json + poses.txt) or a bare pose file."""
    path = Path(path_arg)
    if path.is_dir():
        meta = json.loads((path / _DB_META).read_text(encoding="utf-8"))
        store = None
        if meta.get("descriptors"):
            desc_dir = Path(meta["descriptors"])
            if not desc_dir.is_absolute():
                desc_dir = path / desc_dir
            store = DescriptorStore(desc_dir)
        return ingest_pose_file(
            path / meta["poses"], scene_name=meta.get("scene", path.name), descriptors=store
        )
    return ingest_pose_file(path)


def _make_predictor(spec: str, ground_truth: dict[str, Pose], db: PoseDatabase):
    if spec.startswith("synthetic:"):
        parts = spec[len("synthetic:"):].split(",")
        if len(parts) != 4:
            raise ValueError(
                "synthetic predictor spec must be synthetic:SIGMA_POS,SIGMA_ROT,P_OUT,SEED"
            )
        sigma_pos, sigma_rot, p_out = (float(p) for p in parts[:3])
        seed = int(parts[3])
        positions = db.positions
        truth = ground_truth if ground_truth else {
            e.image_id: e.pose for e in db.entries
        }
        all_positions = list(positions) + [p.position for p in truth.values()]
        stacked = np.stack(all_positions) if all_positions else np.zeros((1, 3))
        box = (stacked.min(axis=0), stacked.max(axis=0))
        return SyntheticPosePredictor(
            truth, box, sigma_pos, sigma_rot, p_out, seed=seed
        )
    return FilePosePredictor(spec)


def _emit_report(report_dict: dict, out_path: str | None) -> None:
    text = json.dumps(report_dict, indent=2)
    if out_path:
        Path(out_path).write_text(text + "\n", encoding="utf-8")
    else:
        print(text)


def _cmd_build_db(args) -> int:
    db = ingest_pose_file(args.poses, scene_name=args.scene)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_pose_file(db, out / "poses.txt")
    meta = {
        "format": "posegate-db-v1",
        "scene": db.scene_name,
        "n_entries": len(db),
        "poses": "poses.txt",
        "descriptors": args.descriptors,
    }
    (out / _DB_META).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    print(f"database {db.scene_name!r}: {len(db)} entries -> {out}", file=sys.stderr)
    return EXIT_OK


def _cmd_tune_gamma(args) -> int:
    db = _load_db(args.db)
    anchors = [
        line.strip()
        for line in Path(args.anchors).read_text(encoding="utf-8").splitlines()
        if line.strip() and not line.strip().startswith("#")
    ]
    matcher = MatcherConfig(ratio=args.ratio)
    report = tune_gamma(db, anchors, args.dth, matcher)
    counts = sorted(
        (pair.good_match_count for pair in report.pairs), reverse=True
    )
    print(
        f"scene {report.scene!r}: {len(report.pairs)} far pairs, "
        f"match counts (top 10): {counts[:10]}",
        file=sys.stderr,
    )
    print(
        f"max_matches={report.max_matches} suggested_gamma={report.suggested_gamma}",
        file=sys.stderr,
    )
    _emit_report(report.to_json_dict(), args.out)
    return EXIT_OK


def _cmd_gate(args) -> int:
    db = _load_db(args.db)
    # Ground truth for a synthetic predictor comes from the database itself;
    # a real prediction file needs no ground truth at all.
    predictor = _make_predictor(args.pred, {}, db)
    cfg = GateConfig(args.dth, args.gamma, matcher=MatcherConfig(ratio=args.ratio))
    descriptors = db.descriptor_store.get(args.query)
    decision = gate(args.query, descriptors, predictor, db, cfg)
    print(json.dumps(decision.to_json_dict()))
    print(f"{args.query}: {decision.verdict.value}", file=sys.stderr)
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    db = _load_db(args.db)
    queries = parse_pose_records(args.queries)
    ground_truth = dict(queries)
    predictor = _make_predictor(args.pred, ground_truth, db)
    cfg = GateConfig(args.dth, args.gamma, matcher=MatcherConfig(ratio=args.ratio))

    store = db.descriptor_store
    batch = []
    load_errors: list[tuple[str, Exception]] = []
    for image_id, _ in queries:
        try:
            batch.append((image_id, store.get(image_id)))
        except MissingDescriptors as exc:
            load_errors.append((image_id, exc))
    result = gate_batch(batch, predictor, db, cfg)
    for decision in result.decisions:
        if decision is not None:
            print(json.dumps(decision.to_json_dict()))
    for image_id, error in load_errors:
        print(f"error on query {image_id!r}: {error}", file=sys.stderr)
    for index, error in result.errors:
        print(f"error on query {batch[index][0]!r}: {error}", file=sys.stderr)

    decisions = result.succeeded
    tiers = AccuracyTiers()
    gated = evaluate(decisions, ground_truth, tiers, gated=True, scene=db.scene_name)
    payload = {"scene": db.scene_name, "gated": gated.to_json_dict()}
    _print_report_line("gated", gated)
    if args.ungated_baseline:
        ungated = evaluate(decisions, ground_truth, tiers, gated=False, scene=db.scene_name)
        payload["ungated"] = ungated.to_json_dict()
        payload["comparison"] = compare_runs(ungated, gated)
        _print_report_line("ungated", ungated)
    _emit_report(payload, args.out)
    if result.errors or load_errors:
        return EXIT_MISSING_DATA
    return EXIT_OK


def _print_report_line(label, report) -> None:
    print(
        f"{label:>8}: n={report.n_total} keyframes={report.n_keyframes} "
        f"({100.0 * report.keyframe_ratio:.1f}%) "
        f"median={report.median_pos_m:.3f}m/{report.median_ori_deg:.2f}deg "
        f"tiers={report.pct_high:.1f}/{report.pct_medium:.1f}/{report.pct_low:.1f}",
        file=sys.stderr,
    )


def _cmd_synth(args) -> int:
    scene = generate_scene(args.seed, n_landmarks=args.landmarks)
    split = generate_split(scene, args.seed + 1, args.train, args.test, args.bias)
    dump_split(split, args.out)
    print(
        f"scene seed={args.seed}: {args.landmarks} landmarks, "
        f"{args.train} train / {args.test} test frames -> {args.out}",
        file=sys.stderr,
    )
    return EXIT_OK


def _cmd_bench(args) -> int:
    report = bench(args.db_size, args.descriptors, args.reps)
    print(
        f"retrieval p50={report.retrieval_us['p50']}us p95={report.retrieval_us['p95']}us | "
        f"match p50={report.match_us['p50']}us p95={report.match_us['p95']}us | "
        f"combined p95={report.combined_us['p95']}us",
        file=sys.stderr,
    )
    _emit_report(report.to_json_dict(), args.out)
    return EXIT_OK


_COMMANDS = {
    "build-db": _cmd_build_db,
    "tune-gamma": _cmd_tune_gamma,
    "gate": _cmd_gate,
    "evaluate": _cmd_evaluate,
    "synth": _cmd_synth,
    "bench": _cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except _DATA_ERRORS as exc:
        print(f"posegate: {exc}", file=sys.stderr)
        return EXIT_MISSING_DATA
    except _CONFIG_ERRORS as exc:
        print(f"posegate: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
