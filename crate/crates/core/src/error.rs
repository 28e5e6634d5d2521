use thiserror::Error;

use crate::domain::Rank;
use crate::sim::DeadlockReport;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DomainError {
    #[error("invalid group: member set is empty")]
    EmptyGroup,
    #[error("rank {rank} is out of range for world size {world_size}")]
    RankOutOfRange { rank: Rank, world_size: u32 },
    #[error("rank {0} appears twice in the group")]
    DuplicateMember(Rank),
}

/// A workload text error with its 1-based line number.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    pub(crate) fn new(line: usize, message: impl Into<String>) -> Self {
        ParseError {
            line,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot generate workload: {0}")]
pub struct GenerateError(pub String);

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("erroneous program: {0}")]
    Erroneous(String),
    #[error("unsupported feature: {0}")]
    Unsupported(String),
    #[error("deadlock: {0}")]
    Deadlock(Box<DeadlockReport>),
    #[error("runaway execution: exceeded {steps} steps")]
    Runaway { steps: u64 },
    #[error("protocol invariant violated: {0}")]
    InvariantViolation(String),
}

/// Structural problems in an event log handed to the oracle.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LogError {
    #[error("event {index}: {message}")]
    Malformed { index: usize, message: String },
    #[error("event log line {line}: {message}")]
    Decode { line: usize, message: String },
}
