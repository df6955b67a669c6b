use serde::{Deserialize, Serialize};

use super::DissectError;
use crate::io::DatasetIndex;

pub const DEFAULT_DECISION_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub f1: f64,
    pub accuracy: f64,
    pub auc: f64,
    pub average_precision: f64,
    pub decision_threshold: f64,
}

pub fn compute_metrics(dataset: &DatasetIndex, decision_threshold: f64) -> Result<Metrics, DissectError> {
    let pairs = dataset
        .entries
        .iter()
        .map(|e| {
            e.predicted_prob
                .map(|p| (e.fractured, p))
                .ok_or_else(|| DissectError::MissingPredictions {
                    sample_id: e.sample_id.clone(),
                })
        })
        .collect::<Result<Vec<_>, _>>()?;
    metrics_from_scores(&pairs, decision_threshold)
}

/// Metrics over `(label, score)` pairs. A score at or above the threshold is
/// a positive prediction.
pub fn metrics_from_scores(pairs: &[(bool, f64)], decision_threshold: f64) -> Result<Metrics, DissectError> {
    let positives = pairs.iter().filter(|p| p.0).count();
    let negatives = pairs.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(DissectError::SingleClassDataset);
    }
    let (mut tp, mut fp, mut tn, mut fneg) = (0usize, 0usize, 0usize, 0usize);
    for &(y, p) in pairs {
        match (y, p >= decision_threshold) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
            (true, false) => fneg += 1,
        }
    }
    let accuracy = (tp + tn) as f64 / pairs.len() as f64;
    let f1 = if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
    };

    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1));
    let (p, n) = (positives as f64, negatives as f64);
    let (mut tp_run, mut fp_run) = (0usize, 0usize);
    let (mut auc, mut ap) = (0.0, 0.0);
    let (mut prev_tpr, mut prev_fpr, mut prev_recall) = (0.0, 0.0, 0.0);
    let mut i = 0;
    while i < sorted.len() {
        // Tied scores form one operating point.
        let score = sorted[i].1;
        while i < sorted.len() && sorted[i].1 == score {
            if sorted[i].0 {
                tp_run += 1;
            } else {
                fp_run += 1;
            }
            i += 1;
        }
        let tpr = tp_run as f64 / p;
        let fpr = fp_run as f64 / n;
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        let precision = tp_run as f64 / (tp_run + fp_run) as f64;
        ap += (tpr - prev_recall) * precision;
        prev_tpr = tpr;
        prev_fpr = fpr;
        prev_recall = tpr;
    }
    Ok(Metrics {
        f1,
        accuracy,
        auc,
        average_precision: ap,
        decision_threshold,
    })
}
