use alloc::boxed::Box;
use alloc::string::String;
use alloc::vec::Vec;

use crate::schema::Timestamp;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid config `{field}`: {reason}")]
    Config { field: String, reason: String },
    #[error("schema violation: {0}")]
    Schema(String),
    #[error("resolution {k} is too dense for a window of length {h}")]
    ResolutionTooDense { h: usize, k: usize },
    #[error("aggregation block {start}..{end} collapses to zero periods after rounding")]
    Collapse { start: Timestamp, end: Timestamp },
    #[error("chronological split needs at least 3 distinct keys, got {distinct}")]
    SplitInfeasible { distinct: usize },
    #[error("batch statistics need at least 2 samples, got {samples}")]
    Statistics { samples: usize },
    #[error("global variable `{0}` differs across channels")]
    Consistency(String),
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NonFinite { epoch: usize, step: usize },
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn at(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

pub(crate) trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.at(stage))
    }
}
