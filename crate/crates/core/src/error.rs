use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::dyna::StageReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke a documented precondition (shape, range, flag).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("episode exhausted: all {0} steps already taken")]
    EpisodeExhausted(usize),

    #[error("training diverged: {0}")]
    Divergence(String),

    /// A stage stopped early on divergence. Carries the partial report.
    #[error("task {} halted at step {step}: {detail}", report.task_id)]
    StageHalted {
        step: u64,
        detail: String,
        report: Box<StageReport>,
    },

    #[error("insufficient data: requested {requested}, available {available}")]
    InsufficientData { requested: usize, available: usize },

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("malformed metrics at line {line}: {detail}")]
    Metrics { line: u64, detail: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
