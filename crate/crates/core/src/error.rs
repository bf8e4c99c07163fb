use std::io;

use thiserror::Error;

use crate::mobility::MobilityError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("cannot parse {what}: {message}")]
    Parse { what: String, message: String },
    #[error(transparent)]
    Mobility(#[from] MobilityError),
    #[error("invariant breach: {0}")]
    Invariant(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    /// Process exit status: 1 for bad input, 2 for a breached runtime invariant.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invariant(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
