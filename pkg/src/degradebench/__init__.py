"""Benchmarking VLM answer stability under temporally degraded video.

The package is organised around the closed loop it measures:

- :mod:`degradebench.imaging` — float image containers, PNG I/O, PSNR.
- :mod:`degradebench.degrade` — physically motivated corruption operators
  (trajectory-driven motion blur, shot/read sensor noise, a block-transform
  surrogate codec) plus corruption schedules over a frame timeline.
- :mod:`degradebench.calibrate` — feedback-driven difficulty control mapping
  model performance to degradation parameters.
- :mod:`degradebench.tasks` — annotation ingestion and entropy-guided
  temporal question generation over an object timeline.
- :mod:`degradebench.refine` — ensemble-disagreement pseudo-label refinement
  (Jensen-Shannon spread, robust pairwise-midpoint location estimates).
- :mod:`degradebench.metrics` — answer judging, hallucination/recovery rates
  and temporal-consistency checks.
- :mod:`degradebench.models` — wire protocol for chat-completion endpoints
  and the deterministic mock models used for testing.
- :mod:`degradebench.harness` — episode orchestration, JSONL run records,
  scoring and byte-exact replay.
"""

from .calibrate import (
    CalibratorConfig,
    DegradationParams,
    DifficultyCalibrator,
    FeedbackWindow,
    PerformanceFeedback,
    map_to_params,
    next_severity,
    replay_trail,
)
from .degrade import (
    ALL_DEGRADATION_TAGS,
    BITRATE_LEVELS,
    DEFAULT_QUANT_STEPS,
    DEGRADATION_TAXONOMY,
    CodecBackendError,
    CompressionLevel,
    DegradationSchedule,
    EmptyKernelError,
    ExternalCodec,
    MotionTrajectory,
    NoiseParams,
    PsfKernel,
    apply_compression,
    apply_motion_blur,
    apply_sensor_noise,
    corruption_mask,
    dead_pixel_mask,
    defocus_psf,
    delta_psf,
    disk_trajectory,
    linear_trajectory,
    load_trajectory,
    quant_step_for_bitrate,
    render_psf,
)
from .harness import (
    CodecSettings,
    ConfigError,
    EpisodeRecord,
    NoiseSettings,
    RunConfig,
    annotate_with_uir,
    config_from_dict,
    generate_assets,
    generate_tasks,
    load_config,
    load_sequence,
    read_record,
    replay_record,
    run_benchmark,
    run_episode,
    score_record,
)
from .imaging import (
    DimensionError,
    Frame,
    Image,
    ImageIOError,
    Sequence,
    convolve2d,
    encode_png,
    load_image,
    psnr,
    save_image,
)
from .metrics import (
    ConstraintResolutionError,
    TemporalConstraint,
    Transcript,
    Turn,
    UndefinedMetricError,
    hallucination_rate,
    judge,
    normalize_answer,
    recovery_rate,
    temporal_consistency,
)
from .models import (
    DisagreeThenAgreeMock,
    EchoMock,
    FailingPerturbableMock,
    HttpModelClient,
    ModelEndpoint,
    ModelRequestError,
    PerturbableHttpClient,
    PlantedTruthMock,
    ScriptedMock,
    SplitAnswerMock,
    StablePerturbableMock,
    StickyWrongMock,
    TurnContext,
    WrongOnCorruptedMock,
    build_chat_request,
    build_perturbable_request,
    canonical_json,
    make_mock,
    make_perturbable_mock,
    parse_chat_response,
    stable_embedding,
    wrong_answer_for,
)
from .refine import (
    EnsembleConfig,
    EnsembleError,
    InferenceRun,
    PseudoLabel,
    UncertaintyReport,
    adapt_dropout,
    assess_ensemble,
    consensus_answer,
    ensemble_uncertainty,
    hl_dispersion,
    hl_estimate,
    js_divergence,
    refine_loop,
    tune_threshold,
)
from .seeds import child_seed
from .tasks import (
    TASK_KINDS,
    AbsentObjectError,
    AnnotationParseError,
    AnnotationValidationError,
    FrameAnnotation,
    MemoryBuffer,
    ObjectState,
    Task,
    TaskSettings,
    appearance_drift,
    canonical_answer,
    delta_bbox,
    generate_query,
    ingest_annotations,
    semantic_entropy,
)

__version__ = "0.1.0"

__all__ = [
    "ALL_DEGRADATION_TAGS",
    "AbsentObjectError",
    "AnnotationParseError",
    "AnnotationValidationError",
    "BITRATE_LEVELS",
    "CalibratorConfig",
    "CodecBackendError",
    "CodecSettings",
    "CompressionLevel",
    "ConfigError",
    "ConstraintResolutionError",
    "DEFAULT_QUANT_STEPS",
    "DEGRADATION_TAXONOMY",
    "DegradationParams",
    "DegradationSchedule",
    "DifficultyCalibrator",
    "DimensionError",
    "DisagreeThenAgreeMock",
    "EchoMock",
    "EmptyKernelError",
    "EnsembleConfig",
    "EnsembleError",
    "EpisodeRecord",
    "ExternalCodec",
    "FailingPerturbableMock",
    "FeedbackWindow",
    "Frame",
    "FrameAnnotation",
    "HttpModelClient",
    "Image",
    "ImageIOError",
    "InferenceRun",
    "MemoryBuffer",
    "ModelEndpoint",
    "ModelRequestError",
    "MotionTrajectory",
    "NoiseParams",
    "NoiseSettings",
    "ObjectState",
    "PerformanceFeedback",
    "PerturbableHttpClient",
    "PlantedTruthMock",
    "PseudoLabel",
    "PsfKernel",
    "RunConfig",
    "ScriptedMock",
    "Sequence",
    "SplitAnswerMock",
    "StablePerturbableMock",
    "StickyWrongMock",
    "TASK_KINDS",
    "Task",
    "TaskSettings",
    "TemporalConstraint",
    "Transcript",
    "Turn",
    "TurnContext",
    "UncertaintyReport",
    "UndefinedMetricError",
    "WrongOnCorruptedMock",
    "adapt_dropout",
    "annotate_with_uir",
    "appearance_drift",
    "apply_compression",
    "apply_motion_blur",
    "apply_sensor_noise",
    "assess_ensemble",
    "build_chat_request",
    "build_perturbable_request",
    "canonical_answer",
    "canonical_json",
    "child_seed",
    "config_from_dict",
    "consensus_answer",
    "convolve2d",
    "corruption_mask",
    "dead_pixel_mask",
    "defocus_psf",
    "delta_bbox",
    "delta_psf",
    "disk_trajectory",
    "encode_png",
    "ensemble_uncertainty",
    "generate_assets",
    "generate_query",
    "generate_tasks",
    "hallucination_rate",
    "hl_dispersion",
    "hl_estimate",
    "ingest_annotations",
    "js_divergence",
    "judge",
    "linear_trajectory",
    "load_config",
    "load_image",
    "load_sequence",
    "load_trajectory",
    "make_mock",
    "make_perturbable_mock",
    "map_to_params",
    "next_severity",
    "normalize_answer",
    "parse_chat_response",
    "psnr",
    "quant_step_for_bitrate",
    "read_record",
    "recovery_rate",
    "refine_loop",
    "render_psf",
    "replay_record",
    "replay_trail",
    "run_benchmark",
    "run_episode",
    "save_image",
    "score_record",
    "semantic_entropy",
    "stable_embedding",
    "temporal_consistency",
    "tune_threshold",
    "wrong_answer_for",
]
