//! Error types shared across the crate.

use thiserror::Error;

use crate::topology::NodeId;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: reference to undeclared node {id}")]
    UndeclaredNode { line: usize, id: NodeId },
    #[error("line {line}: duplicate node id {id}")]
    DuplicateNode { line: usize, id: NodeId },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AmendError {
    #[error("requested capacity {requested} outside interval [{cap_min}, {cap_max}]")]
    OutOfInterval { requested: u64, cap_min: u64, cap_max: u64 },
    #[error("increase of {requested} exceeds provider free capacity {free}")]
    InsufficientProviderCapacity { requested: u64, free: u64 },
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EngineError {
    #[error("stage {stage}: event cap of {cap} exceeded, negotiation did not terminate")]
    EventCapExceeded { stage: usize, cap: u64 },
    #[error("scenario has no destination")]
    NoDestination,
    #[error("destination {id} is not a declared service")]
    NotAService { id: NodeId },
}
