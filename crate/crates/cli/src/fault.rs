//! Error classes and their process exit codes.

use std::fmt;

use boulder::learn::checkpoint::CheckpointError;
use boulder::rockgen::RockGenError;
use boulder::EnvError;

pub const USAGE: u8 = 2;
pub const DATA: u8 = 3;
pub const NUMERIC: u8 = 4;

#[derive(Debug)]
pub enum Fault {
    /// Invalid invocation (exit 2).
    Usage(String),
    /// Missing, unreadable or inconsistent input (exit 3).
    Data(String),
    /// Non-finite values or a failed bitwise check (exit 4).
    Numeric(String),
}

impl Fault {
    pub fn code(&self) -> u8 {
        match self {
            Fault::Usage(_) => USAGE,
            Fault::Data(_) => DATA,
            Fault::Numeric(_) => NUMERIC,
        }
    }
}

impl fmt::Display for Fault {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Fault::Usage(m) => write!(f, "usage: {m}"),
            Fault::Data(m) => write!(f, "data fault: {m}"),
            Fault::Numeric(m) => write!(f, "numeric fault: {m}"),
        }
    }
}

impl From<EnvError> for Fault {
    fn from(e: EnvError) -> Self {
        match e {
            EnvError::MissingCache(l) => Fault::Data(format!(
                "no reset cache for level {l}; run `boulder cache --level {l}` first"
            )),
            other => Fault::Data(other.to_string()),
        }
    }
}

impl From<RockGenError> for Fault {
    fn from(e: RockGenError) -> Self {
        Fault::Data(e.to_string())
    }
}

impl From<CheckpointError> for Fault {
    fn from(e: CheckpointError) -> Self {
        Fault::Data(format!("checkpoint: {e}"))
    }
}

impl From<std::io::Error> for Fault {
    fn from(e: std::io::Error) -> Self {
        Fault::Data(e.to_string())
    }
}

/// Attach the path to an i/o error.
pub fn io_at(path: &std::path::Path) -> impl FnOnce(std::io::Error) -> Fault + '_ {
    move |e| Fault::Data(format!("{}: {e}", path.display()))
}
