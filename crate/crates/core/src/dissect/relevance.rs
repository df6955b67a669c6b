use super::{rank_descending, ActivationVolume, DissectError, UnitThresholds};

/// Per-unit inference relevance `r_k` for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct RelevanceRanking {
    pub sample_id: String,
    pub scores: Vec<f64>,
    /// Unit indices in rank order.
    pub order: Vec<usize>,
    /// 1-based rank of each unit.
    pub ranks: Vec<usize>,
}

impl RelevanceRanking {
    pub fn from_scores(sample_id: impl Into<String>, scores: Vec<f64>) -> Self {
        let (order, ranks) = rank_descending(&scores);
        Self {
            sample_id: sample_id.into(),
            scores,
            order,
            ranks,
        }
    }
}

/// Sum of `A_k` over voxels with `A_k > T_k`, accumulated in f64 in voxel order.
pub fn masked_sum(values: &[f32], threshold: f32) -> f64 {
    values
        .iter()
        .filter(|&&v| v > threshold)
        .fold(0.0, |acc, &v| acc + v as f64)
}

pub fn relevance_scores(a: &ActivationVolume, t: &UnitThresholds) -> Result<RelevanceRanking, DissectError> {
    t.check_units(a)?;
    let scores = (0..a.units())
        .map(|k| masked_sum(a.unit(k), t.thresholds[k]))
        .collect();
    Ok(RelevanceRanking::from_scores(a.sample_id.clone(), scores))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dissect::Estimator;
    use proptest::prelude::*;

    fn thresholds(t: Vec<f32>) -> UnitThresholds {
        let k = t.len();
        UnitThresholds {
            q: 0.005,
            estimator: Estimator::Exact,
            thresholds: t,
            population: vec![1; k],
            spatial: [1, 1, 1],
        }
    }

    #[test]
    fn hand_sum() {
        let a = ActivationVolume::new("s", 2, [1, 2, 2], vec![1.0, 2.0, 3.0, 4.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let r = relevance_scores(&a, &thresholds(vec![2.5, 0.0])).unwrap();
        assert_eq!(r.scores, [7.0, 0.0]);
        assert_eq!(r.order, [0, 1]);
        assert_eq!(r.ranks, [1, 2]);
    }

    #[test]
    fn empty_mask_is_positive_zero() {
        let s = masked_sum(&[-1.0, 0.5], 1.0);
        assert_eq!(s.to_bits(), 0.0f64.to_bits());
        assert_eq!(serde_json::to_string(&s).unwrap(), "0.0");
    }

    #[test]
    fn all_zero_ranks_by_index() {
        let a = ActivationVolume::new("s", 4, [1, 1, 2], vec![0.0; 8]).unwrap();
        let r = relevance_scores(&a, &thresholds(vec![0.0; 4])).unwrap();
        assert_eq!(r.order, [0, 1, 2, 3]);
        assert!(r.scores.iter().all(|&s| s == 0.0));
    }

    proptest! {
        #[test]
        fn disjoint_split_is_additive(raw in prop::collection::vec(0u16..2560, 64), t in 0.0f32..10.0, cut in 0usize..64) {
            // Dyadic values keep every partial sum exactly representable.
            let values: Vec<f32> = raw.iter().map(|&v| v as f32 / 256.0).collect();
            let whole = masked_sum(&values, t);
            let parts = masked_sum(&values[..cut], t) + masked_sum(&values[cut..], t);
            prop_assert_eq!(whole, parts);
        }

        #[test]
        fn zero_iff_not_enabled(values in prop::collection::vec(0.0f32..4.0, 2 * 27), t in prop::collection::vec(0.0f32..4.0, 2)) {
            let a = ActivationVolume::new("s", 2, [3, 3, 3], values).unwrap();
            let r = relevance_scores(&a, &thresholds(t.clone())).unwrap();
            for k in 0..2 {
                let enabled = a.unit(k).iter().any(|&v| v > t[k]);
                prop_assert!(r.scores[k] >= 0.0);
                prop_assert_eq!(r.scores[k] > 0.0, enabled);
            }
        }
    }
}
