use std::path::Path;

use ltrf::intervals::IntervalError;
use ltrf::ir::SyntaxError;
use ltrf::rfsim::{SimError, TraceError, WorkloadError};

pub const USAGE: u8 = 1;
pub const IRREDUCIBLE: u8 = 2;
pub const DEADLOCK: u8 = 3;

/// A failed command: process exit code plus message.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub type CmdResult<T = ()> = Result<T, Failure>;

impl Failure {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Failure::new(USAGE, message)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Failure::usage(format!("{}: {e}", path.display()))
    }

    pub fn syntax(path: &Path, e: SyntaxError) -> Self {
        Failure::usage(format!("{}:{}: {}", path.display(), e.line, e.reason))
    }

    pub fn trace_file(path: &Path, e: TraceError) -> Self {
        Failure::usage(format!("{}: {e}", path.display()))
    }
}

impl From<IntervalError> for Failure {
    fn from(e: IntervalError) -> Self {
        match e {
            IntervalError::IrreducibleCfg { ref offending_edges } => {
                let edges: Vec<String> = offending_edges.iter().map(|(a, b)| format!("B{a}->B{b}")).collect();
                Failure::new(IRREDUCIBLE, format!("irreducible control flow; offending edges: {}", edges.join(", ")))
            }
            other => Failure::usage(other.to_string()),
        }
    }
}

impl From<SimError> for Failure {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Deadlock { .. } => Failure::new(DEADLOCK, e.to_string()),
            other => Failure::usage(other.to_string()),
        }
    }
}

impl From<WorkloadError> for Failure {
    fn from(e: WorkloadError) -> Self {
        match e {
            WorkloadError::Interval(e) => e.into(),
            other => Failure::usage(other.to_string()),
        }
    }
}

impl From<TraceError> for Failure {
    fn from(e: TraceError) -> Self {
        Failure::usage(e.to_string())
    }
}
