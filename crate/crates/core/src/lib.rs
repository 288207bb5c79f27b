//! Core building blocks for a desk-scale synthetic-data federation:
//! labeled/soft datasets, labeled RNG streams, procedural classification
//! tasks with federation splitting, a class-conditional Gaussian-mixture
//! generator, and a small soft-target softmax classifier.
//!
//! Everything in this crate is deterministic: any operation that needs
//! randomness takes an [`RngStream`], and identical inputs plus an
//! identical stream produce bit-identical outputs.

pub mod classifier;
pub mod data;
mod error;
pub mod generator;
pub mod rng;
pub mod task;

pub use classifier::{
    accuracy, fedavg_combine, fit_classifier, Activation, ClassifierModel, LrSchedule,
    TrainConfig, Trainer,
};
pub use data::{concat, harden, LabeledDataset, SoftDataset};
pub use error::CoreError;
pub use generator::{fit_generator, sample_generator, GeneratorCheckpoint, GeneratorModel};
pub use rng::RngStream;
pub use task::{make_task, split_federation, split_tvt, TaskSpec};
