//! Desk-scale classifiers, training and checkpoints.

mod net;
mod pipeline;
mod train;

pub use net::{
    build_freqnet, build_model, build_spatialnet, Forward, GateDrive, GateSpec, Model, ModelKind, ModelSpec,
};
pub use pipeline::{downsample2x, rgb_tensor, Checkpoint, Preprocess};
pub use train::{evaluate, metrics_csv, train, EpochMetrics, Evaluation, Sample, Split, TrainConfig};
