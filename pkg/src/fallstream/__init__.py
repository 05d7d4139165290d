"""Streaming fall detection from wearable accelerometer data."""

from .errors import (
    ArtifactError,
    ConfigError,
    InsufficientData,
    MissingLabel,
    NotReady,
    ParseError,
    SchemaMismatch,
    UnknownActivity,
)
from .features import (
    SCHEMA_V1,
    FeatureSchema,
    FeatureVector,
    Scaler,
    SisFallFeatures,
    SlidingBuffer,
    apply_scaler,
    extract_features,
    fit_scaler,
    scale_values,
    sisfall_characteristics,
)
from .ingest import (
    MOBIACT_ACTIVITIES,
    BinaryClass,
    ColumnMapping,
    Sample,
    SocketSource,
    convert_adc_to_g,
    load_mapping,
    map_activity_to_class,
    parse_trial_file,
    parse_trial_path,
    parse_wire_line,
    replay_source,
)
from .model import (
    Metrics,
    MlpModel,
    ModelArtifact,
    TrainConfig,
    backward,
    evaluate,
    forward,
    forward_batch,
    init_model,
    load_artifact,
    loss_bce,
    save_artifact,
    stratified_split,
    train,
)
from .stream import (
    Detection,
    PipelineConfig,
    PipelineStats,
    ReplaySpec,
    SocketSpec,
    classify_samples,
    classify_window,
    detection_line,
    run_pipeline,
)
from .windowing import Window, WindowAssembler, WindowConfig, assemble_windows, majority_label

__version__ = "0.1.0"
