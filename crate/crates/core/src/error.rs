//! Error type shared by every estimator in the crate.

use std::path::PathBuf;

/// Errors raised while loading data, estimating premia, or running experiments.
#[derive(Debug, thiserror::Error)]
pub enum PremiaError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("ragged row at line {line}: expected {expected} fields, found {found}")]
    RaggedRow {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// Reciprocal condition number fell below the singularity threshold.
    #[error("singular matrix in {context} (reciprocal condition {rcond:.3e})")]
    Singular { context: String, rcond: f64 },

    #[error("identification error: {0}")]
    Identification(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("bandwidth error: {lags} lags with only {periods} periods")]
    Bandwidth { lags: usize, periods: usize },

    #[error("degenerate variance for component {component}")]
    DegenerateVariance { component: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("split {split}: {source}")]
    InSplit {
        split: usize,
        #[source]
        source: Box<PremiaError>,
    },

    #[error("rotation {rotation}: {source}")]
    InRotation {
        rotation: usize,
        #[source]
        source: Box<PremiaError>,
    },
}

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Io,
    Data,
    Identification,
    Config,
    Internal,
}

impl PremiaError {
    pub fn in_split(split: usize, err: PremiaError) -> Self {
        PremiaError::InSplit {
            split,
            source: Box::new(err),
        }
    }

    pub fn in_rotation(rotation: usize, err: PremiaError) -> Self {
        PremiaError::InRotation {
            rotation,
            source: Box::new(err),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            PremiaError::Io { .. } => ErrorKind::Io,
            PremiaError::Parse { .. }
            | PremiaError::RaggedRow { .. }
            | PremiaError::Alignment(_)
            | PremiaError::InsufficientData(_) => ErrorKind::Data,
            PremiaError::Singular { .. }
            | PremiaError::Identification(_)
            | PremiaError::DegenerateVariance { .. } => ErrorKind::Identification,
            PremiaError::Config(_) | PremiaError::Parameter(_) | PremiaError::Bandwidth { .. } => {
                ErrorKind::Config
            }
            PremiaError::Dimension(_) | PremiaError::Contract(_) => ErrorKind::Internal,
            PremiaError::InSplit { source, .. } | PremiaError::InRotation { source, .. } => {
                source.kind()
            }
        }
    }
}

pub type Result<T, E = PremiaError> = std::result::Result<T, E>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_errors_keep_inner_kind() {
        let inner = PremiaError::Singular {
            context: "X'X".into(),
            rcond: 1e-20,
        };
        let err = PremiaError::in_rotation(3, PremiaError::in_split(2, inner));
        assert_eq!(err.kind(), ErrorKind::Identification);
        let msg = err.to_string();
        assert!(msg.starts_with("rotation 3: split 2: singular matrix in X'X"), "{msg}");
    }

    #[test]
    fn ragged_row_display() {
        let err = PremiaError::RaggedRow {
            line: 4,
            expected: 3,
            found: 4,
        };
        assert_eq!(err.to_string(), "ragged row at line 4: expected 3 fields, found 4");
    }
}
