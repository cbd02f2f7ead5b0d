//! Evaluation: agreement metrics, repeated splits, the protocol runner and
//! the per-document consistency report.

pub mod consistency;
pub mod kappa;
pub mod protocol;
pub mod split;

pub use consistency::{
    consistency_report, ConsistencyClass, ConsistencyReport, ConsistencyRow, LoggedPrediction,
    DEFAULT_MIN_OCCURRENCES,
};
pub use kappa::{linear_kappa, qwk, KappaInput};
pub use protocol::{
    run_protocol, PipelineScorer, ProtocolReport, RepeatOutcome, ScoredDoc, Scorer, Summary,
};
pub use split::{split_indices, Split, SplitPlan};
