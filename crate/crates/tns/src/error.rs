//! Crate-wide error type.

use thiserror::Error;

#[derive(Error, Debug)]
pub enum Error {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("format error at line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("ordering error at line {line}: {msg}")]
    Ordering { line: usize, msg: String },
    #[error("node {node} out of range (num_nodes = {num_nodes})")]
    NodeRange { node: u32, num_nodes: u32 },
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("internal contract violation: {0}")]
    Contract(String),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code per the CLI contract: 1 for validation problems,
    /// 2 for runtime or numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Parse { .. }
            | Error::Format { .. }
            | Error::Ordering { .. }
            | Error::NodeRange { .. }
            | Error::Param(_)
            | Error::Config(_)
            | Error::Data(_) => 1,
            Error::Contract(_) | Error::Numeric(_) | Error::Io(_) | Error::Json(_) => 2,
        }
    }
}
