use thiserror::Error;

/// Errors produced by the feature learner, the kernel machinery and the
/// persistence layer.
#[derive(Debug, Error)]
pub enum SlideError {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("non-finite value at feature {row}, sample {col}")]
    NonFinite { row: usize, col: usize },

    #[error("{}singular linear system; use eps > 0", layer_prefix(*.layer))]
    Singular { layer: Option<usize> },

    #[error("unsupported labels: {0}")]
    UnsupportedLabels(String),

    #[error("labels contain a single class ({0}); two are required")]
    SingleClass(i64),

    #[error("class {class} is absent from the training part of fold {fold}; use fewer folds")]
    ClassAbsentFromFold { class: i64, fold: usize },

    #[error("solver did not converge within {iterations} iterations (max violation {violation:.3e})")]
    NonConvergence { iterations: usize, violation: f64 },

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported model format version {found} (expected {expected})")]
    ModelVersion { found: u32, expected: u32 },

    #[error("truncated or malformed model file: {0}")]
    ModelTruncated(String),

    #[error("inconsistent model file: {0}")]
    ModelShape(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn layer_prefix(layer: Option<usize>) -> String {
    match layer {
        Some(k) => format!("layer {k}: "),
        None => String::new(),
    }
}

impl SlideError {
    /// True for failures of the numerical routines rather than of the input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, SlideError::Singular { .. } | SlideError::NonConvergence { .. })
    }
}

pub type Result<T> = std::result::Result<T, SlideError>;
