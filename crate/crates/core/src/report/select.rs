use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Axis;
use crate::dissect::{masked_sum, ActivationSource, ActivationVolume, CorrelationRanking, UnitThresholds};
use crate::io::DatasetIndex;
use crate::Result;

pub const DEFAULT_TOP_UNITS: usize = 10;
pub const DEFAULT_TOP_SAMPLES: usize = 25;

/// Highest thresholded-activation slice of one unit, at native resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceChoice {
    pub axis: Axis,
    pub index: usize,
    pub score: f64,
}

impl SliceChoice {
    /// Corresponding slice on a patch with `patch_len` slices along the axis.
    pub fn patch_index(&self, native_len: usize, patch_len: usize) -> usize {
        patch_slice_index(self.index, native_len, patch_len)
    }
}

/// Patch slice whose centre falls inside native slice `index`.
pub fn patch_slice_index(index: usize, native_len: usize, patch_len: usize) -> usize {
    (((index as f64 + 0.5) * patch_len as f64 / native_len as f64).floor() as usize).min(patch_len.saturating_sub(1))
}

pub fn top_correlated_units(r: &CorrelationRanking, n: usize) -> Vec<usize> {
    r.order.iter().take(n).copied().collect()
}

/// Number of native slices of `a` along `axis`.
pub fn axis_len(spatial: [usize; 3], axis: Axis) -> usize {
    let [d, h, w] = spatial;
    match axis {
        Axis::Axial => d,
        Axis::Coronal => h,
        Axis::Sagittal => w,
    }
}

pub fn select_slice(a: &ActivationVolume, k: usize, threshold: f32, axis: Axis) -> SliceChoice {
    let [d, h, w] = a.spatial();
    let n = axis_len(a.spatial(), axis);
    let mut scores = vec![0.0f64; n];
    let mut any = false;
    let values = a.unit(k);
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                let v = values[(z * h + y) * w + x];
                if v > threshold {
                    any = true;
                    let s = match axis {
                        Axis::Axial => z,
                        Axis::Coronal => y,
                        Axis::Sagittal => x,
                    };
                    scores[s] += v as f64;
                }
            }
        }
    }
    if !any {
        return SliceChoice { axis, index: n / 2, score: 0.0 };
    }
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    SliceChoice {
        axis,
        index: best,
        score: scores[best],
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedSample {
    pub sample_id: String,
    pub relevance: f64,
}

/// Samples ordered by descending `r_k`, ties by ascending sample id.
pub fn top_activating_samples(k: usize, dataset: &DatasetIndex, t: &UnitThresholds, n: usize, fractured_only: bool) -> Result<Vec<RankedSample>> {
    let candidates: Vec<usize> = (0..dataset.len())
        .filter(|&i| !fractured_only || dataset.entries[i].fractured)
        .collect();
    let mut ranked = candidates
        .par_iter()
        .map(|&i| {
            let a = dataset.load(i)?;
            t.check_units(&a)?;
            Ok(RankedSample {
                sample_id: dataset.entries[i].sample_id.clone(),
                relevance: masked_sum(a.unit(k), t.thresholds[k]),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| b.relevance.total_cmp(&a.relevance).then_with(|| a.sample_id.cmp(&b.sample_id)));
    ranked.truncate(n);
    Ok(ranked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dissect::PositivePolicy;
    use proptest::prelude::*;

    #[test]
    fn single_voxel_depth() {
        let mut data = vec![0.0f32; 6 * 5 * 4];
        data[(3 * 5 + 2) * 4 + 1] = 9.0;
        let a = ActivationVolume::new("s", 1, [6, 5, 4], data).unwrap();
        assert_eq!(select_slice(&a, 0, 1.0, Axis::Axial).index, 3);
        assert_eq!(select_slice(&a, 0, 1.0, Axis::Coronal).index, 2);
        let s = select_slice(&a, 0, 1.0, Axis::Sagittal);
        assert_eq!((s.index, s.score), (1, 9.0));
    }

    #[test]
    fn empty_mask_picks_middle() {
        let a = ActivationVolume::new("s", 1, [96, 2, 2], vec![0.0; 96 * 4]).unwrap();
        let s = select_slice(&a, 0, 0.0, Axis::Axial);
        assert_eq!((s.index, s.score), (48, 0.0));
    }

    #[test]
    fn patch_index_mapping() {
        assert_eq!(patch_slice_index(3, 12, 96), 28);
        assert_eq!(patch_slice_index(0, 1, 96), 48);
        assert_eq!(patch_slice_index(11, 12, 96), 92);
        assert_eq!(patch_slice_index(5, 8, 8), 5);
    }

    #[test]
    fn top_units_follow_rank_order() {
        let r = CorrelationRanking::from_counts(PositivePolicy::GroundTruthPositive, 4, vec![1, 3, 3, 0, 4]);
        assert_eq!(top_correlated_units(&r, 1), [4]);
        assert_eq!(top_correlated_units(&r, 3), [4, 1, 2]);
        assert_eq!(top_correlated_units(&r, 10).len(), 5);
        let flat = CorrelationRanking::from_counts(PositivePolicy::GroundTruthPositive, 1, vec![1; 12]);
        assert_eq!(top_correlated_units(&flat, 10), (0..10).collect::<Vec<_>>());
    }

    proptest! {
        #[test]
        fn matches_exhaustive_slice_search(values in prop::collection::vec(-2.0f32..2.0, 4 * 3 * 5), t in -1.0f32..1.5, axis in 0usize..3) {
            let axis = [Axis::Axial, Axis::Coronal, Axis::Sagittal][axis];
            let a = ActivationVolume::new("s", 1, [4, 3, 5], values.clone()).unwrap();
            let choice = select_slice(&a, 0, t, axis);
            let n = axis_len([4, 3, 5], axis);
            let slice_sum = |s: usize| {
                let mut total = 0.0f64;
                for z in 0..4 {
                    for y in 0..3 {
                        for x in 0..5 {
                            let on = match axis { Axis::Axial => z, Axis::Coronal => y, Axis::Sagittal => x } == s;
                            let v = values[(z * 3 + y) * 5 + x];
                            if on && v > t {
                                total += v as f64;
                            }
                        }
                    }
                }
                total
            };
            if values.iter().all(|&v| v <= t) {
                prop_assert_eq!(choice.index, n / 2);
                prop_assert_eq!(choice.score, 0.0);
            } else {
                let best = (0..n).map(slice_sum).fold(f64::NEG_INFINITY, f64::max);
                let first = (0..n).find(|&s| slice_sum(s) == best).unwrap();
                prop_assert_eq!(choice.index, first);
                prop_assert_eq!(choice.score, best);
            }
        }
    }
}
