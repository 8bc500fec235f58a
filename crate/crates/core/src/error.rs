use alloc::string::String;
use alloc::vec::Vec;

use crate::model::OpId;
use crate::sched::InFlightQuery;

/// Errors raised by the core algorithms.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid graph: {0}")]
    InvalidGraph(String),
    #[error("invalid cluster: {0}")]
    InvalidCluster(String),
    #[error("cycle detected")]
    Cycle,
    #[error("graph is not series-parallel; witness edges {witness:?}")]
    NotSeriesParallel { witness: Vec<(OpId, OpId)> },
    #[error("wrong SP node kind: expected {expected}")]
    WrongNodeKind { expected: &'static str },
    #[error("micro-batch {micro_batch} not divisible by data-parallel degree {degree}")]
    IndivisibleMicroBatch { micro_batch: u32, degree: u32 },
    #[error("no in-flight table row matches {query:?}")]
    NoConditionMatches { query: InFlightQuery },
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("stage {stage} needs {bytes} bytes per device, over the budget")]
    MemoryExceeded { stage: usize, bytes: f64 },
    #[error("no feasible strategy")]
    NoFeasibleStrategy,
    #[error("deadlock: {blocked} tasks blocked")]
    Deadlock { blocked: usize, stages: Vec<usize> },
    #[error("enumeration budget exceeded: {0}")]
    BudgetExceeded(String),
}

pub type Result<T> = core::result::Result<T, Error>;
