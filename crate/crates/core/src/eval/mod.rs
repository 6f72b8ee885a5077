//! Retrieval metrics, standardized partial AUC, few-shot detection and a
//! linear leakage probe.

pub mod detection;
pub mod probe;
pub mod retrieval;

pub use detection::{
    detect_multi_target, detect_single_target, partial_auc, pauc, reference_score, roc_points, DetectionScores, Label,
    Protocol,
};
pub use probe::{train_probe, LinearProbe, ProbeConfig};
pub use retrieval::{aggregate_author, mrr, rank, recall_at_k, ScoredRanking};
