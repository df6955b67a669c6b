//! Brute-force reference for thresholds, enabled units, `c_k` and `r_k`.
//!
//! Written for obviousness rather than speed: one full sort per unit, explicit
//! per-voxel loops and direct counting. It shares no code with
//! [`crate::dissect`] so that agreement between the two is meaningful.

use super::SynthError;
use crate::io::{read_tensor_file, DatasetIndex};
use crate::Result;

/// Largest total number of activation values the oracle will hold in memory.
pub const ORACLE_MAX_VALUES: u64 = 100_000_000;

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSample {
    pub sample_id: String,
    pub fractured: bool,
    pub predicted_prob: Option<f64>,
    pub units: usize,
    /// Unit-major values, `voxels` per unit.
    pub values: Vec<f32>,
}

impl OracleSample {
    fn voxels(&self) -> usize {
        self.values.len() / self.units
    }

    fn value(&self, unit: usize, voxel: usize) -> f32 {
        self.values[unit * self.voxels() + voxel]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleResult {
    pub thresholds: Vec<f32>,
    /// `enabled[sample][unit]`.
    pub enabled: Vec<Vec<bool>>,
    /// Enabled counts over fractured samples.
    pub numerators_ground_truth: Vec<u64>,
    pub c_ground_truth: Option<Vec<f64>>,
    /// Enabled counts over fractured samples predicted at or above 0.5.
    pub numerators_true_positive: Vec<u64>,
    pub c_true_positive: Option<Vec<f64>>,
    /// `relevance[sample][unit]`.
    pub relevance: Vec<Vec<f64>>,
}

/// The `r`-th smallest value (1-based) where `r` is the first index whose
/// strict-exceedance count `N - r` is within `q * N`.
pub fn oracle_threshold(mut values: Vec<f32>, q: f64) -> f32 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite activations"));
    let n = values.len();
    let mut r = 1;
    while r < n && ((n - r) as f64) > q * n as f64 + 1e-9 {
        r += 1;
    }
    values[r - 1]
}

fn check_budget(values: u64) -> Result<(), SynthError> {
    if values > ORACLE_MAX_VALUES {
        return Err(SynthError::TooLarge {
            values,
            limit: ORACLE_MAX_VALUES,
        });
    }
    Ok(())
}

pub fn oracle_from_volumes(samples: &[OracleSample], q: f64) -> Result<OracleResult, SynthError> {
    check_budget(samples.iter().map(|s| s.values.len() as u64).sum())?;
    let Some(first) = samples.first() else {
        return Err(SynthError::InvalidSpec("oracle needs at least one sample".into()));
    };
    let units = first.units;

    let mut thresholds = Vec::new();
    for k in 0..units {
        let mut pooled = Vec::new();
        for s in samples {
            for v in 0..s.voxels() {
                pooled.push(s.value(k, v));
            }
        }
        thresholds.push(oracle_threshold(pooled, q));
    }

    let mut enabled = Vec::new();
    let mut relevance = Vec::new();
    for s in samples {
        let mut e = vec![false; units];
        let mut r = vec![0.0f64; units];
        for k in 0..units {
            for v in 0..s.voxels() {
                let a = s.value(k, v);
                if a > thresholds[k] {
                    e[k] = true;
                    r[k] += a as f64;
                }
            }
        }
        enabled.push(e);
        relevance.push(r);
    }

    let mut gt = vec![0u64; units];
    let mut tp = vec![0u64; units];
    let mut gt_total = 0u64;
    let mut tp_total = 0u64;
    for (s, e) in samples.iter().zip(&enabled) {
        if !s.fractured {
            continue;
        }
        gt_total += 1;
        let predicted = s.predicted_prob.is_some_and(|p| p >= 0.5);
        if predicted {
            tp_total += 1;
        }
        for k in 0..units {
            if e[k] {
                gt[k] += 1;
                if predicted {
                    tp[k] += 1;
                }
            }
        }
    }
    let ratio = |counts: &[u64], total: u64| (total > 0).then(|| counts.iter().map(|&c| c as f64 / total as f64).collect());
    Ok(OracleResult {
        thresholds,
        c_ground_truth: ratio(&gt, gt_total),
        c_true_positive: ratio(&tp, tp_total),
        numerators_ground_truth: gt,
        numerators_true_positive: tp,
        enabled,
        relevance,
    })
}

/// Loads every manifest sample and runs the oracle over all of them.
pub fn oracle_dissect(dataset: &DatasetIndex, q: f64) -> Result<OracleResult> {
    let mut samples = Vec::new();
    let mut total = 0u64;
    for e in &dataset.entries {
        let t = read_tensor_file(&dataset.activation_file(e))?;
        let (shape, data) = t.into_parts();
        total += shape.iter().product::<usize>() as u64;
        check_budget(total)?;
        samples.push(OracleSample {
            sample_id: e.sample_id.clone(),
            fractured: e.fractured,
            predicted_prob: e.predicted_prob,
            units: shape[0],
            values: data.into_f32(),
        });
    }
    Ok(oracle_from_volumes(&samples, q)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thousand_values() {
        let values: Vec<f32> = (1..=1000).rev().map(|v| v as f32).collect();
        assert_eq!(oracle_threshold(values, 0.005), 995.0);
        assert_eq!(oracle_threshold(vec![4.0, 1.0, 3.0, 2.0], 0.25), 3.0);
    }

    #[test]
    fn single_sample_scores_are_binary() {
        let s = OracleSample {
            sample_id: "a".into(),
            fractured: true,
            predicted_prob: Some(0.9),
            units: 3,
            values: vec![0.0, 5.0, 0.0, 0.0, 1.0, 1.0, 2.0, 2.0, 2.0],
        };
        let r = oracle_from_volumes(&[s], 0.34).unwrap();
        assert_eq!(r.thresholds, [0.0, 1.0, 2.0]);
        assert_eq!(r.c_ground_truth.unwrap(), [1.0, 0.0, 0.0]);
        assert_eq!(r.relevance[0], [5.0, 0.0, 0.0]);
    }

    #[test]
    fn refuses_oversized_input() {
        assert!(check_budget(ORACLE_MAX_VALUES).is_ok());
        assert!(matches!(check_budget(ORACLE_MAX_VALUES + 1), Err(SynthError::TooLarge { .. })));
    }
}
