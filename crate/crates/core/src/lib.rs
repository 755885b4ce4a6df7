//! Instance-aware segmentation losses for 3-D volumes.
//!
//! The blob loss adds to a global overlap term the mean of one term per ground-truth
//! instance, each computed with the other instances masked out. Around it sit component
//! labeling, volumetric and detection metrics, a synthetic blob generator and a small
//! per-voxel training harness.

pub mod components;
pub mod error;
pub mod loss;
pub mod metrics;
pub mod synth;
pub mod train;
pub mod volume;

pub use components::{component_sizes, extract_instance_mask, label_components, Connectivity};
pub use error::{Error, Result};
pub use loss::{
    base_loss, blob_loss, blob_term, instance_domain_mask, instance_losses, instance_terms,
    multiclass_blob_loss, BaseLoss, BaseLossKind, BlobLossConfig, BlobLossResult, LossResult,
    MultiClassLossResult, OneHotSegmentation, OverlapSums, TermValue, DEFAULT_EPSILON,
};
pub use metrics::{
    detection_metrics, full_report, mask_report, match_instances, match_instances_with,
    surface_dice, surface_voxels, volumetric_metrics, DetectionMetrics, EvalOptions,
    MatchingMode, MatchingResult, MetricsReport, VolumetricMetrics,
};
pub use synth::{
    generate, instance_shape_features, shape_features, PlacedBlob, RadiusSpec, ShapeFeatures,
    SynthSample, SynthSpec,
};
pub use train::{
    build_split, derive_seed, evaluate, featurize, forward, loss_and_gradient, run_experiment,
    train_step, CheckpointPolicy, EpochRecord, ExperimentOutcome, FeatureMap, Optimizer,
    ParamGrad, Sample, Split, TrainConfig, TrainHistory, VoxelModel, FEATURE_COUNT,
};
pub use volume::{
    hadamard, read_volume, write_volume, AnyVolume, BinaryMask, DenseVolume, Dims, Dtype,
    InstanceLabeling,
};
