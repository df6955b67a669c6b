use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{enabled_set, rank_descending, ActivationSource, DissectError, EnabledUnitSet, UnitThresholds};
use crate::io::{DatasetIndex, SampleEntry};
use crate::Result;

/// Probability at or above which a prediction counts as positive for the
/// true-positive policy.
pub const TRUE_POSITIVE_CUTOFF: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositivePolicy {
    /// Every fractured sample.
    #[default]
    GroundTruthPositive,
    /// Fractured samples the model also predicted as fractured.
    TruePositive,
}

impl PositivePolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            PositivePolicy::GroundTruthPositive => "ground_truth_positive",
            PositivePolicy::TruePositive => "true_positive",
        }
    }

    /// Whether `entry` belongs to the positive set.
    pub fn includes(self, entry: &SampleEntry) -> Result<bool, DissectError> {
        if !entry.fractured {
            return Ok(false);
        }
        match self {
            PositivePolicy::GroundTruthPositive => Ok(true),
            PositivePolicy::TruePositive => match entry.predicted_prob {
                Some(p) => Ok(p >= TRUE_POSITIVE_CUTOFF),
                None => Err(DissectError::MissingPredictions {
                    sample_id: entry.sample_id.clone(),
                }),
            },
        }
    }
}

impl fmt::Display for PositivePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PositivePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "gt-positive" | "ground_truth_positive" | "ground-truth-positive" => Ok(PositivePolicy::GroundTruthPositive),
            "true-positive" | "true_positive" | "tp" => Ok(PositivePolicy::TruePositive),
            other => Err(format!("unknown policy {other:?}, expected gt-positive or true-positive")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationRanking {
    pub policy: PositivePolicy,
    pub positive_count: usize,
    /// Number of positive samples in which each unit is enabled.
    pub enabled_counts: Vec<u64>,
    /// `c_k`, indexed by unit.
    pub scores: Vec<f64>,
    /// Unit indices in rank order.
    pub order: Vec<usize>,
    /// 1-based rank of each unit.
    pub ranks: Vec<usize>,
}

impl CorrelationRanking {
    pub fn units(&self) -> usize {
        self.scores.len()
    }

    pub fn from_counts(policy: PositivePolicy, positive_count: usize, enabled_counts: Vec<u64>) -> Self {
        let scores: Vec<f64> = enabled_counts
            .iter()
            .map(|&c| c as f64 / positive_count as f64)
            .collect();
        let (order, ranks) = rank_descending(&scores);
        Self {
            policy,
            positive_count,
            enabled_counts,
            scores,
            order,
            ranks,
        }
    }

    pub fn rank_of(&self, k: usize) -> Option<usize> {
        self.ranks.get(k).copied()
    }
}

/// Indices of the positive samples under `policy`, in manifest order.
pub fn positive_set(dataset: &DatasetIndex, policy: PositivePolicy) -> Result<Vec<usize>, DissectError> {
    let mut out = Vec::new();
    for (i, e) in dataset.entries.iter().enumerate() {
        if policy.includes(e)? {
            out.push(i);
        }
    }
    if out.is_empty() {
        return Err(DissectError::NoPositiveSamples(policy));
    }
    Ok(out)
}

/// Tallies `c_k` numerators from precomputed enabled sets.
pub fn correlation_from_sets(units: usize, positives: &[EnabledUnitSet], policy: PositivePolicy) -> Result<CorrelationRanking, DissectError> {
    if positives.is_empty() {
        return Err(DissectError::NoPositiveSamples(policy));
    }
    let mut counts = vec![0u64; units];
    for set in positives {
        for &k in &set.units {
            counts[k] += 1;
        }
    }
    Ok(CorrelationRanking::from_counts(policy, positives.len(), counts))
}

pub fn correlation_scores(dataset: &DatasetIndex, t: &UnitThresholds, policy: PositivePolicy) -> Result<CorrelationRanking> {
    let positives = positive_set(dataset, policy)?;
    let sets = positives
        .par_iter()
        .map(|&i| {
            let a = dataset.load(i)?;
            Ok(enabled_set(&a, t)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(correlation_from_sets(t.units(), &sets, policy)?)
}
