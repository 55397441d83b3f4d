//! Decision-tree accuracy under occlusion: CART on raw tensor bytes with a
//! stratified 8:1:1 protocol averaged over repeats.

mod protocol;
mod tree;

pub use protocol::{
    evaluate_strategy, evaluate_tensors, partition_sizes, strategy_name, write_accuracy_reports, AccuracyReport, EvalProtocol, FlowCap, RepeatResult,
    SplitAudit,
};
pub use tree::{train_decision_tree, ByteMatrix, Node, Split, Tree, TreeParams};

use thiserror::Error;

use crate::occlusion::OcclusionError;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid protocol: {0}")]
    Protocol(String),
    #[error("need at least 2 classes with enough flows, have {0}")]
    TooFewClasses(usize),
    #[error(transparent)]
    Occlusion(#[from] OcclusionError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
