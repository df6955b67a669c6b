//! Per-unit quantile thresholds, concept masks, correlation and relevance
//! scores, and classification metrics.

mod activation;
mod correlation;
mod masks;
mod metrics;
mod relevance;
pub mod sketch;
mod thresholds;

use thiserror::Error;

pub use activation::{load_activation, ActivationSource, ActivationVolume};
pub use correlation::{
    correlation_from_sets, correlation_scores, positive_set, CorrelationRanking, PositivePolicy,
    TRUE_POSITIVE_CUTOFF,
};
pub use masks::{binarize, enabled_set, enabled_units, EnabledUnitSet, MaskVolume};
pub use metrics::{compute_metrics, metrics_from_scores, Metrics, DEFAULT_DECISION_THRESHOLD};
pub use relevance::{masked_sum, relevance_scores, RelevanceRanking};
pub use thresholds::{fit_thresholds, nearest_rank, sketch_units, Estimator, UnitThresholds, DEFAULT_QUANTILE};

#[derive(Debug, Error)]
pub enum DissectError {
    #[error("dataset has no samples")]
    EmptyDataset,
    #[error("sample {sample_id}: expected {expected}, found {found}")]
    ShapeMismatch {
        sample_id: String,
        expected: String,
        found: String,
    },
    #[error("sample {sample_id}: thresholds cover {expected} units but activations have {found}")]
    DimensionMismatch {
        sample_id: String,
        expected: usize,
        found: usize,
    },
    #[error("no positive samples under the {0} policy")]
    NoPositiveSamples(PositivePolicy),
    #[error("sample {sample_id} has no predicted_prob")]
    MissingPredictions { sample_id: String },
    #[error("metrics need both fractured and non-fractured samples")]
    SingleClassDataset,
    #[error("quantile level must lie in (0, 1), got {0}")]
    InvalidQuantile(f64),
    #[error("invalid activations for {sample_id}: {reason}")]
    InvalidActivation { sample_id: String, reason: String },
}

/// Orders units by descending score, ties by ascending index. Returns the
/// order and the 1-based rank of each unit.
pub fn rank_descending(scores: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; scores.len()];
    for (pos, &k) in order.iter().enumerate() {
        ranks[k] = pos + 1;
    }
    (order, ranks)
}
