//! Minimal numeric core: dense row-major matrices, sparse CSR, reverse-mode
//! differentiation for the fixed op set the pipeline needs, and Adam.
//!
//! Everything stores 32-bit floats and accumulates reductions in 64-bit.
//! All randomness is explicit: initializers take seeds, dropout uses a
//! counter-based generator, and no op reads ambient RNG state.

mod adam;
mod dense;
mod init;
mod sparse;
mod tape;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use dense::DenseMatrix;
pub use init::{gaussian, glorot_uniform};
pub use sparse::SparseCsr;
pub use tape::{dropout_key, Gradients, NodeId, ParamId, Params, Tape};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericError {
    #[error("shape mismatch in {op}: {lhs_rows}x{lhs_cols} vs {rhs_rows}x{rhs_cols}")]
    ShapeMismatch {
        op: &'static str,
        lhs_rows: usize,
        lhs_cols: usize,
        rhs_rows: usize,
        rhs_cols: usize,
    },
    #[error("{op} produced a non-finite value")]
    NonFinite { op: &'static str },
    #[error("dropout probability {p} outside [0, 1)")]
    InvalidDropout { p: f32 },
    #[error("loss must be a 1x1 scalar, got {rows}x{cols}")]
    NotScalar { rows: usize, cols: usize },
    #[error("backward already ran on this tape; record a new forward pass first")]
    BackwardConsumed,
    #[error("node {id} was not recorded on this tape")]
    UnknownNode { id: usize },
    #[error("mask is empty")]
    EmptyMask,
    #[error("label {label} at row {row} out of range for {classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: i64,
        classes: usize,
    },
    #[error("row {row} out of range for {rows} rows")]
    RowOutOfRange { row: usize, rows: usize },
    #[error("invalid CSR: {0}")]
    InvalidCsr(String),
    #[error("matrix data length {len} does not match {rows}x{cols}")]
    BadLength { len: usize, rows: usize, cols: usize },
}
