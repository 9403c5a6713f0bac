//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by corpus handling, the numeric core, the model and task heads.
#[derive(Error, Debug)]
pub enum Error {
    #[error("empty corpus")]
    EmptyCorpus,

    #[error("no compatible length for T_raw={t_raw} under cap {cap}")]
    NoCompatibleLength { t_raw: usize, cap: usize },

    #[error("vocabulary too small for substitution (V={v}, need V > 3)")]
    VocabularyTooSmall { v: usize },

    #[error("input shorter than filter (T={t}, h={h})")]
    InputShorterThanFilter { t: usize, h: usize },

    #[error("degenerate embedding column {column} (norm {norm:e} <= {eps:e})")]
    DegenerateColumn { column: usize, norm: f64, eps: f64 },

    #[error("nonpositive temperature {0}")]
    NonpositiveTemperature(f64),

    #[error("gradient overflow: non-finite gradient in parameter `{param}`")]
    GradientOverflow { param: String },

    #[error("incompatible length at encoder layer {layer}: T={len} with (h={h}, r={r})")]
    IncompatibleLength {
        layer: usize,
        len: usize,
        h: usize,
        r: usize,
    },

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("backward requires a scalar loss node, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),

    #[error("{0}")]
    InvalidData(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }
}
