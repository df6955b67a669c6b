use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::sketch::{QuantileSketch, DEFAULT_BASE_CAPACITY};
use super::{ActivationSource, ActivationVolume, DissectError};
use crate::Result;

pub const DEFAULT_QUANTILE: f64 = 0.005;

/// Samples per streaming chunk. Fixed so that the merge tree, and therefore
/// the sketch contents, do not depend on the number of worker threads.
const STREAM_CHUNK: usize = 8;
/// Chunks processed per parallel wave, bounding peak memory.
const STREAM_WAVE: usize = 32;
/// Samples loaded at once while pooling values for the exact estimator.
const EXACT_BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Exact,
    Streaming,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Exact => "exact",
            Estimator::Streaming => "streaming",
        })
    }
}

impl FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "exact" => Ok(Estimator::Exact),
            "streaming" => Ok(Estimator::Streaming),
            other => Err(format!("unknown estimator {other:?}, expected exact or streaming")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitThresholds {
    pub q: f64,
    pub estimator: Estimator,
    pub thresholds: Vec<f32>,
    pub population: Vec<u64>,
    /// Spatial shape `[D, H, W]` of the fitting population.
    pub spatial: [usize; 3],
}

impl UnitThresholds {
    pub fn units(&self) -> usize {
        self.thresholds.len()
    }

    pub fn check_units(&self, a: &ActivationVolume) -> Result<(), DissectError> {
        if a.units() != self.units() {
            return Err(DissectError::DimensionMismatch {
                sample_id: a.sample_id.clone(),
                expected: self.units(),
                found: a.units(),
            });
        }
        Ok(())
    }
}

/// 1-based nearest-rank index `ceil((1 - q) * n)`, computed as
/// `n - floor(q * n)` with a small tolerance so that products such as
/// `0.005 * 1000` are not rounded down by binary representation error.
pub fn nearest_rank(n: u64, q: f64) -> u64 {
    let tail = (q * n as f64 + 1e-9).floor() as u64;
    n.saturating_sub(tail).max(1)
}

fn validate_q(q: f64) -> Result<(), DissectError> {
    if q.is_finite() && q > 0.0 && q < 1.0 {
        Ok(())
    } else {
        Err(DissectError::InvalidQuantile(q))
    }
}

fn check_shape(first: &(usize, [usize; 3]), a: &ActivationVolume) -> Result<(), DissectError> {
    if (a.units(), a.spatial()) != *first {
        return Err(DissectError::ShapeMismatch {
            sample_id: a.sample_id.clone(),
            expected: format!("{} units of {:?}", first.0, first.1),
            found: format!("{} units of {:?}", a.units(), a.spatial()),
        });
    }
    Ok(())
}

/// Fits per-unit top-quantile thresholds over every sample in `source`.
pub fn fit_thresholds<S: ActivationSource + ?Sized>(source: &S, q: f64, estimator: Estimator) -> Result<UnitThresholds> {
    validate_q(q)?;
    if source.is_empty() {
        return Err(DissectError::EmptyDataset.into());
    }
    match estimator {
        Estimator::Exact => fit_exact(source, q),
        Estimator::Streaming => fit_streaming(source, q, DEFAULT_BASE_CAPACITY),
    }
}

fn load_batch<S: ActivationSource + ?Sized>(source: &S, range: std::ops::Range<usize>) -> Result<Vec<ActivationVolume>> {
    range.into_par_iter().map(|i| source.load(i)).collect()
}

fn fit_exact<S: ActivationSource + ?Sized>(source: &S, q: f64) -> Result<UnitThresholds> {
    let first = source.load(0)?;
    let shape = (first.units(), first.spatial());
    let voxels = first.voxels();
    let total = voxels
        .checked_mul(source.len())
        .ok_or_else(|| DissectError::InvalidActivation {
            sample_id: first.sample_id.clone(),
            reason: "population size overflows".into(),
        })?;
    let mut pooled: Vec<Vec<f32>> = (0..shape.0).map(|_| Vec::with_capacity(total)).collect();
    drop(first);

    let mut start = 0;
    while start < source.len() {
        let end = (start + EXACT_BATCH).min(source.len());
        let batch = load_batch(source, start..end)?;
        for a in &batch {
            check_shape(&shape, a)?;
        }
        pooled.par_iter_mut().enumerate().for_each(|(k, values)| {
            for a in &batch {
                values.extend_from_slice(a.unit(k));
            }
        });
        start = end;
    }

    let n = total as u64;
    let rank = nearest_rank(n, q);
    let thresholds = pooled
        .into_par_iter()
        .map(|mut values| {
            let (_, t, _) = values.select_nth_unstable_by(rank as usize - 1, f32::total_cmp);
            *t
        })
        .collect();
    Ok(UnitThresholds {
        q,
        estimator: Estimator::Exact,
        thresholds,
        population: vec![n; shape.0],
        spatial: shape.1,
    })
}

fn sketch_chunk(batch: &[ActivationVolume], units: usize, base: usize) -> Vec<QuantileSketch> {
    (0..units)
        .map(|k| {
            let mut s = QuantileSketch::new(base);
            for a in batch {
                s.extend_from_slice(a.unit(k));
            }
            s
        })
        .collect()
}

/// Per-unit sketches over `source`, fed in fixed chunks and merged in chunk
/// order so that the result is independent of scheduling.
pub fn sketch_units<S: ActivationSource + ?Sized>(source: &S, base: usize) -> Result<(Vec<QuantileSketch>, [usize; 3])> {
    if source.is_empty() {
        return Err(DissectError::EmptyDataset.into());
    }
    let first = source.load(0)?;
    let shape = (first.units(), first.spatial());
    drop(first);
    let mut merged: Vec<QuantileSketch> = (0..shape.0).map(|_| QuantileSketch::new(base)).collect();
    let n_chunks = source.len().div_ceil(STREAM_CHUNK);
    let mut chunk = 0;
    while chunk < n_chunks {
        let wave_end = (chunk + STREAM_WAVE).min(n_chunks);
        let partials: Vec<Vec<QuantileSketch>> = (chunk..wave_end)
            .into_par_iter()
            .map(|c| {
                let lo = c * STREAM_CHUNK;
                let hi = (lo + STREAM_CHUNK).min(source.len());
                let batch = (lo..hi).map(|i| source.load(i)).collect::<Result<Vec<_>>>()?;
                for a in &batch {
                    check_shape(&shape, a)?;
                }
                Ok(sketch_chunk(&batch, shape.0, base))
            })
            .collect::<Result<_>>()?;
        for part in partials {
            merged.par_iter_mut().zip(part.par_iter()).for_each(|(m, p)| m.merge(p));
        }
        chunk = wave_end;
    }
    Ok((merged, shape.1))
}

fn fit_streaming<S: ActivationSource + ?Sized>(source: &S, q: f64, base: usize) -> Result<UnitThresholds> {
    let (sketches, spatial) = sketch_units(source, base)?;
    let mut thresholds = Vec::with_capacity(sketches.len());
    let mut population = Vec::with_capacity(sketches.len());
    for s in &sketches {
        let n = s.count();
        thresholds.push(s.value_at_rank(nearest_rank(n, q)).expect("sketch is non-empty"));
        population.push(n);
    }
    Ok(UnitThresholds {
        q,
        estimator: Estimator::Streaming,
        thresholds,
        population,
        spatial,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::seq::SliceRandom;
    use rand::SeedableRng;

    fn single_unit(values: Vec<f32>) -> ActivationVolume {
        let n = values.len();
        ActivationVolume::new("s", 1, [1, 1, n], values).unwrap()
    }

    #[test]
    fn nearest_rank_matches_ceiling_definition() {
        assert_eq!(nearest_rank(1000, 0.005), 995);
        assert_eq!(nearest_rank(4, 0.25), 3);
        assert_eq!(nearest_rank(1, 0.5), 1);
        for n in 1..500u64 {
            for q in [0.001, 0.005, 0.1, 0.25, 0.333, 0.5, 0.9] {
                let ceil = ((1.0 - q) * n as f64 - 1e-9).ceil().max(1.0) as u64;
                assert_eq!(nearest_rank(n, q), ceil, "n={n} q={q}");
            }
        }
    }

    #[test]
    fn permutation_of_one_to_thousand() {
        let mut values: Vec<f32> = (1..=1000).map(|v| v as f32).collect();
        values.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(3));
        let a = single_unit(values.clone());
        for est in [Estimator::Exact, Estimator::Streaming] {
            let t = fit_thresholds(&vec![a.clone()], 0.005, est).unwrap();
            assert_eq!(t.thresholds, [995.0]);
            let above = values.iter().filter(|&&v| v > t.thresholds[0]).count();
            assert_eq!(above, 5);
        }
    }

    #[test]
    fn constant_map_has_no_exceedance() {
        let t = fit_thresholds(&vec![single_unit(vec![2.5; 64])], 0.005, Estimator::Exact).unwrap();
        assert_eq!(t.thresholds, [2.5]);
    }

    #[test]
    fn pooled_order_statistic_over_samples() {
        let data = vec![
            ActivationVolume::new("a", 1, [1, 1, 2], vec![1.0, 2.0]).unwrap(),
            ActivationVolume::new("b", 1, [1, 1, 2], vec![3.0, 4.0]).unwrap(),
        ];
        let t = fit_thresholds(&data, 0.25, Estimator::Exact).unwrap();
        assert_eq!(t.thresholds, [3.0]);
        assert_eq!(t.population, [4]);
    }

    #[test]
    fn errors() {
        let empty: Vec<ActivationVolume> = vec![];
        assert!(matches!(
            fit_thresholds(&empty, 0.005, Estimator::Exact),
            Err(crate::Error::Dissect(DissectError::EmptyDataset))
        ));
        let mixed = vec![single_unit(vec![0.0; 4]), single_unit(vec![0.0; 5])];
        for est in [Estimator::Exact, Estimator::Streaming] {
            assert!(matches!(
                fit_thresholds(&mixed, 0.005, est),
                Err(crate::Error::Dissect(DissectError::ShapeMismatch { .. }))
            ));
        }
        for q in [0.0, 1.0, f64::NAN] {
            assert!(fit_thresholds(&vec![single_unit(vec![0.0])], q, Estimator::Exact).is_err());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn exact_matches_full_sort_and_bounds_exceedance(
            samples in prop::collection::vec(prop::collection::vec(-50i16..50, 12), 1..20),
            q in 0.001f64..0.6,
        ) {
            let data: Vec<ActivationVolume> = samples
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    ActivationVolume::new(format!("s{i}"), 2, [1, 2, 3], s.iter().map(|&v| v as f32 / 4.0).collect()).unwrap()
                })
                .collect();
            let t = fit_thresholds(&data, q, Estimator::Exact).unwrap();
            for k in 0..2 {
                let mut pooled: Vec<f32> = data.iter().flat_map(|a| a.unit(k).to_vec()).collect();
                pooled.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let n = pooled.len();
                let rank = (1..=n).find(|&i| (n - i) as f64 <= q * n as f64 + 1e-9).unwrap();
                prop_assert_eq!(t.thresholds[k], pooled[rank - 1]);
                let above = pooled.iter().filter(|&&v| v > t.thresholds[k]).count();
                prop_assert!(above as f64 <= q * n as f64 + 1e-9);
            }
        }

        #[test]
        fn permuting_units_permutes_thresholds(values in prop::collection::vec(-1e3f32..1e3, 3 * 20)) {
            let a = ActivationVolume::new("s", 3, [1, 4, 5], values.clone()).unwrap();
            let mut swapped = values.clone();
            swapped[..20].copy_from_slice(&values[40..]);
            swapped[40..].copy_from_slice(&values[..20]);
            let b = ActivationVolume::new("s", 3, [1, 4, 5], swapped).unwrap();
            let ta = fit_thresholds(&vec![a], 0.05, Estimator::Exact).unwrap();
            let tb = fit_thresholds(&vec![b], 0.05, Estimator::Exact).unwrap();
            prop_assert_eq!(ta.thresholds[0], tb.thresholds[2]);
            prop_assert_eq!(ta.thresholds[1], tb.thresholds[1]);
            prop_assert_eq!(ta.thresholds[2], tb.thresholds[0]);
        }
    }

    #[test]
    fn streaming_is_thread_count_independent() {
        let data: Vec<ActivationVolume> = (0..40)
            .map(|i| {
                let values = (0..2 * 4096).map(|v| ((v * 7 + i * 131) % 9973) as f32).collect();
                ActivationVolume::new(format!("s{i}"), 2, [4, 32, 32], values).unwrap()
            })
            .collect();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| fit_thresholds(&data, 0.005, Estimator::Streaming).unwrap())
        };
        let one = run(1);
        assert_eq!(one, run(4));
        let bits: Vec<u32> = one.thresholds.iter().map(|t| t.to_bits()).collect();
        let again: Vec<u32> = run(3).thresholds.iter().map(|t| t.to_bits()).collect();
        assert_eq!(bits, again);
    }
}
