use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Operand dimensions disagree; `detail` names both sides.
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{path}: bad IDX magic: expected {expected:#010x}, got {actual:#010x}")]
    IdxMagic {
        path: PathBuf,
        expected: u32,
        actual: u32,
    },

    #[error("{path}: IDX payload length mismatch: expected {expected} bytes, got {actual}")]
    IdxLength {
        path: PathBuf,
        expected: usize,
        actual: usize,
    },

    #[error("label {label} at index {index} out of range (num_classes = {num_classes})")]
    LabelRange {
        index: usize,
        label: usize,
        num_classes: usize,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("non-finite loss at sample {sample} (epoch {epoch}, batch {batch})")]
    NonFiniteLoss {
        sample: usize,
        epoch: usize,
        batch: usize,
    },

    #[error("non-finite loss while probing weight ({layer}, {row}, {col})")]
    NonFiniteProbe {
        layer: usize,
        row: usize,
        col: usize,
    },

    #[error("checkpoint: {detail}")]
    Checkpoint { detail: String },

    #[error("nothing to compare: empty layer list")]
    EmptyComparison,

    #[error("invalid configuration: {detail}")]
    Config { detail: String },
}

pub type Result<T> = std::result::Result<T, Error>;
