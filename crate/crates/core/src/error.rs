use thiserror::Error;

use crate::kg::{EntityId, RelationId};

#[derive(Debug, Error)]
pub enum KgError {
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown entity '{0}'")]
    UnknownEntity(String),
    #[error("unknown relation '{0}'")]
    UnknownRelation(String),
    #[error("entity id {0} out of range")]
    UnknownEntityId(EntityId),
    #[error("relation id {0} out of range")]
    UnknownRelationId(RelationId),
    #[error("the self relation is reserved and carries no edges")]
    ReservedRelation,
}

/// Violations of the edge-scorer contract.
#[derive(Debug, Error, PartialEq)]
pub enum ScorerError {
    #[error("score request has no options")]
    EmptyOptions,
    #[error("scorer returned {got} probabilities for {expected} options")]
    WrongArity { expected: usize, got: usize },
    #[error("scorer returned invalid probability {value} for option {index}")]
    InvalidProbability { index: usize, value: f64 },
    #[error("scorer probabilities sum to {sum}, outside 1 ± {tolerance}")]
    NotNormalized { sum: f64, tolerance: f64 },
}

#[derive(Debug, Error)]
pub enum SeekError {
    #[error("anchor set is empty")]
    EmptyAnchors,
    #[error("invalid search parameters: {0}")]
    BadParameters(String),
    #[error("seek result was produced from a different graph")]
    GraphMismatch,
    #[error(transparent)]
    Graph(#[from] KgError),
    #[error("scorer contract violated: {0}")]
    Scorer(#[from] ScorerError),
}

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("query syntax error at offset {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("universal quantification is not supported")]
    Universal,
    #[error("negation is not supported in existential positive queries")]
    Negation,
    #[error("unbound anchor '${0}'")]
    UnboundAnchor(String),
    #[error("invalid query: {0}")]
    Invalid(String),
    #[error(transparent)]
    Graph(#[from] KgError),
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss {loss} at epoch {epoch} (example {example})")]
    NonFiniteLoss { epoch: usize, example: usize, loss: f64 },
    #[error("no trainable examples: {0}")]
    NoExamples(String),
    #[error(transparent)]
    Seek(#[from] SeekError),
    #[error(transparent)]
    Graph(#[from] KgError),
    #[error("scorer contract violated: {0}")]
    Scorer(#[from] ScorerError),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Graph(#[from] KgError),
}

#[derive(Debug, Error, PartialEq)]
pub enum RefineError {
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("entity id {0} is not a node of the subgraph")]
    OutsideSubgraph(EntityId),
    #[error("subgraph uses relation id {0}, beyond the model's {1} relations")]
    UnknownRelation(RelationId, usize),
}

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("no examples to benchmark")]
    NoExamples,
    #[error("example {0} has no gold sequences for the oracle scorer")]
    MissingGold(usize),
    #[error("scorer_calls {calls} exceeds the bound {bound} on example {example}")]
    CostBound { example: usize, calls: u64, bound: u64 },
    #[error(transparent)]
    Seek(#[from] SeekError),
    #[error(transparent)]
    Graph(#[from] KgError),
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("0 examples to evaluate")]
    NoExamples,
    #[error("example {0} has no gold sequences for the oracle scorer")]
    MissingGold(usize),
    #[error(transparent)]
    Seek(#[from] SeekError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Graph(#[from] KgError),
}
