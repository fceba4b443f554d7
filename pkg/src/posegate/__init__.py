"""posegate: pose-gated keyframe selection for absolute pose regressors.

Given a query image, a predicted 6-DoF pose, and a database of training
images with ground-truth poses, the gate retrieves the nearest training
image by pose alone and accepts the query as a keyframe only when enough
good feature matches back the prediction up. The package also ships the
hyperparameter tuner, a synthetic-world test bench, evaluation metrics, and
the ``posegate`` CLI.
"""

from .errors import (
    DecodeError,
    DescriptorCollision,
    DetectorFailure,
    DuplicateImageId,
    KindMismatch,
    MissingDescriptors,
    MissingGroundTruth,
    NonUnitQuaternion,
    ParseError,
    PoseGateError,
    PredictionFailure,
    SceneMismatch,
    ZeroNormOrientation,
)
from .pose import (
    DistanceConfig,
    Pose,
    normalize_quaternion,
    orientation_distance,
    position_distance,
    rotation_error_degrees,
)
from .database import (
    NO_CANDIDATE,
    PoseDatabase,
    RetrievalResult,
    RetrievalStats,
    TrainEntry,
    ingest_pose_file,
    parse_pose_records,
    retrieve_image,
    similarity,
    write_pose_file,
)
from .features import (
    KIND_BINARY_HAMMING,
    KIND_REAL_L2,
    PREPROCESSED_SIZE,
    BuiltinDetector,
    DescriptorSet,
    DescriptorStore,
    MatchReport,
    MatcherConfig,
    cache_filename,
    extract_features,
    match_features,
    preprocess_image,
    read_descriptor_cache,
    write_descriptor_cache,
)
from .gate import (
    BatchResult,
    FilePosePredictor,
    GateConfig,
    GateDecision,
    PosePredictor,
    SyntheticPosePredictor,
    Verdict,
    gate,
    gate_batch,
)
from .tuning import FarPair, TuneReport, sample_far_pair, tune_gamma
from .synthetic import (
    SceneSplit,
    SyntheticFrame,
    SyntheticScene,
    distinct_descriptors,
    dump_split,
    generate_scene,
    generate_split,
    hamming_band,
    render_frame,
)
from .evaluation import (
    AccuracyTiers,
    BenchReport,
    EvalReport,
    bench,
    compare_runs,
    evaluate,
    lower_median,
    nearest_rank,
)
from .presets import PRESETS, GatePreset, find_preset

__version__ = "0.1.0"
