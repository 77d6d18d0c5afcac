use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is missing, malformed or out of range.
    #[error("invalid configuration `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("page {0} is not registered with any security domain")]
    UnknownPage(u64),

    /// The eviction set was profiled under keys that have since been replaced.
    #[error("eviction set built in epoch {set_epoch} is stale (cache is in epoch {cache_epoch})")]
    StaleEvictionSet { set_epoch: u64, cache_epoch: u64 },

    #[error("parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config { key: key.into(), reason: reason.into() }
    }

    /// Short category label used by the command line front end.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Config { .. } | Error::UnknownPage(_) => "config",
            Error::StaleEvictionSet { .. } => "attack",
            Error::Parse { .. } => "parse",
            Error::Io(_) | Error::Csv(_) => "io",
        }
    }

    /// Process exit code for the category.
    pub fn exit_code(&self) -> i32 {
        match self.category() {
            "config" => 2,
            "parse" => 3,
            "io" => 4,
            _ => 1,
        }
    }
}
