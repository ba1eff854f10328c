"""Self-training pipeline for 3D object detection from sparse annotations.

Core pieces: oriented-box geometry, a native scene format plus KITTI
ingestion, an instance bank, confident-instance and reliable-background
mining, bank-driven scene generation, a teacher/student detector pair with
exponential-moving-average coupling, an AP evaluator, and the orchestrated
closed loop (offline and streaming).
"""
from .bank import BankEntry, InstanceBank, bank_init, bank_insert, load_bank, save_bank
from .background import BrokenScene, mine_background
from .detector import (
    Detection,
    DetectorParams,
    InferOptions,
    OracleDetector,
    TrainConfig,
    build_latent_index,
    ema_update,
    greedy_nms,
    train_student,
)
from .errors import (
    CapabilityDenied,
    ChecksumMismatch,
    ConfigInvalid,
    DatasetEmpty,
    EmptyInput,
    EmptyScene,
    EmptyTrainingSet,
    ExchangeTimeout,
    FormatError,
    LayoutMismatch,
    MalformedBinary,
    MalformedCalib,
    MalformedLabel,
    ProtocolViolation,
    ResponderError,
    Sparse3DError,
    UnknownScene,
    VersionMismatch,
)
from .evaluate import (
    AP_IOU_THRESHOLDS,
    EvalReport,
    background_removal_recall,
    compute_ap,
    difficulty_bucket,
    evaluate_detector,
    mean_ap,
    mining_quality,
    pooled_ap,
    write_csv_report,
    write_json_report,
)
from .exchange import ExchangeDetector, external_exchange
from .geometry import (
    AugParams,
    Box3D,
    augment_box,
    augment_points,
    bev_intersection_area,
    iou_3d,
    in_any_box_mask,
    in_box_mask,
    points_in_box,
    rotated_bev_iou,
    sample_augmentation,
    wrap_angle,
)
from .kitti import load_kitti_dir, load_kitti_scene
from .loop import RoundLog, RunConfig, StreamingConfig, logs_to_jsonl, run, run_streaming
from .mining import (
    Candidate,
    CurriculumState,
    build_candidates,
    density_lambda,
    histogram_breakpoint,
    init_density,
    pooled_thresholds,
    select_and_mine,
)
from .scene import (
    Annotation,
    AnnotationMeta,
    CLASS_NAMES,
    CLASS_SIZE_PRIORS,
    ClassId,
    LatentAccess,
    NAME_TO_CLASS,
    Provenance,
    Scene,
    augment_scene,
)
from .scenegen import DEFAULT_PLACEMENT_TARGETS, generate_confident_scene
from .sceneio import load_dataset, load_scene, save_dataset, save_scene
from .synthetic import SynthConfig, perturb_annotations, sparsify, synthesize_dataset

__version__ = "0.1.0"
