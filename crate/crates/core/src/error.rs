use thiserror::Error;

/// Errors produced by the core data model and the two learnable components.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid specification: {0}")]
    InvalidSpec(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("soft-label row {row} sums to {sum}, outside tolerance {tolerance}")]
    SoftLabelRowSum { row: usize, sum: f64, tolerance: f64 },

    #[error("soft-label row {row} contains a negative entry")]
    NegativeSoftLabel { row: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("class {class} has {count} samples but {needed} are required")]
    ClassTooSmall {
        class: usize,
        count: usize,
        needed: usize,
    },

    #[error("generation standard deviation must be positive, got {0}")]
    InvalidSigma(f64),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged { epoch: usize },

    #[error("split ratios invalid: {0}")]
    InvalidRatios(String),

    #[error("requested {requested} partitions from {available} samples")]
    TooManyPartitions { requested: usize, available: usize },

    #[error("model architectures do not match: {0}")]
    ArchitectureMismatch(String),

    #[error("combination weights invalid: {0}")]
    InvalidWeights(String),

    #[error("model deserialization failed: {0}")]
    Deserialize(String),
}
