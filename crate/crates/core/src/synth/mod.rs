//! Seeded synthetic datasets with planted concept units, and a deliberately
//! naive reference implementation of the dissection math.
//!
//! Every sample-unit pair draws from its own ChaCha stream, so any sample can
//! be regenerated independently and generation order never affects output.
//! Background noise is `noise_scale * min(z, noise_ceiling)` with `z ~ N(0, 1)`.
//! Clamping puts a large share of all voxels exactly on the ceiling, so as long
//! as planted blobs occupy no more than a `q` fraction of any unit map, the
//! fitted top-quantile threshold equals the ceiling and a unit is enabled for a
//! sample exactly when a blob was planted.

pub mod oracle;
mod phantom;

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use oracle::{oracle_dissect, oracle_from_volumes, OracleResult, OracleSample, ORACLE_MAX_VALUES};
pub use phantom::phantom_patch;

use crate::dissect::{ActivationSource, ActivationVolume};
use crate::io::{write_file, write_tensor, DatasetIndex, SampleEntry, Split, Tensor, VertebraLabel, Volume};
use crate::Result;

pub const POSITIVE_PROB: f64 = 0.9;
pub const NEGATIVE_PROB: f64 = 0.1;

const PATCH_LANE: u64 = u32::MAX as u64;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("{values} activation values exceed the oracle limit of {limit}")]
    TooLarge { values: u64, limit: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedUnit {
    pub k: usize,
    pub enable_prob_positive: f64,
    pub enable_prob_negative: f64,
    /// Euclidean radius in voxels.
    pub blob_radius: usize,
    pub blob_amplitude: f32,
}

fn default_ceiling() -> Option<f32> {
    Some(1.0)
}

fn default_q() -> f64 {
    crate::dissect::DEFAULT_QUANTILE
}

fn default_patch_size() -> usize {
    crate::prep::DEFAULT_PATCH_SIZE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantSpec {
    pub units: usize,
    /// `[D, H, W]` of every activation map.
    pub spatial_shape: [usize; 3],
    pub positives: usize,
    pub negatives: usize,
    #[serde(default)]
    pub planted: Vec<PlantedUnit>,
    pub noise_scale: f32,
    /// Clamp for the standard-normal background, in units of `noise_scale`.
    /// `null` leaves the noise unclamped, in which case enabled units are no
    /// longer known analytically.
    #[serde(default = "default_ceiling")]
    pub noise_ceiling: Option<f32>,
    pub seed: u64,
    /// Quantile level the blob budget is validated against.
    #[serde(default = "default_q")]
    pub target_q: f64,
    /// Edge length of the emitted patch phantoms; 0 disables patches.
    #[serde(default = "default_patch_size")]
    pub patch_size: usize,
}

impl PlantSpec {
    /// `count` planted units spread evenly over `0..units` with the
    /// given enable probabilities and amplitudes well above the ceiling.
    pub fn planted_suite(units: usize, spatial: [usize; 3], positives: usize, negatives: usize, count: usize, probs: (f64, f64), seed: u64) -> Self {
        let stride = (units / count.max(1)).max(1);
        Self {
            units,
            spatial_shape: spatial,
            positives,
            negatives,
            planted: (0..count)
                .map(|i| PlantedUnit {
                    k: (i * stride + stride / 2) % units,
                    enable_prob_positive: probs.0,
                    enable_prob_negative: probs.1,
                    blob_radius: 1,
                    blob_amplitude: 4.0,
                })
                .collect(),
            noise_scale: 0.5,
            noise_ceiling: Some(1.0),
            seed,
            target_q: crate::dissect::DEFAULT_QUANTILE,
            patch_size: 0,
        }
    }

    pub fn samples(&self) -> usize {
        self.positives + self.negatives
    }

    pub fn voxels(&self) -> usize {
        self.spatial_shape.iter().product()
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.units == 0 || self.units >= PATCH_LANE as usize / 2 {
            return bad(format!("unit count {} out of range", self.units));
        }
        if self.spatial_shape.contains(&0) {
            return bad(format!("spatial shape {:?} has a zero extent", self.spatial_shape));
        }
        if self.samples() == 0 {
            return bad("no samples".into());
        }
        if !(self.noise_scale.is_finite() && self.noise_scale > 0.0) {
            return bad(format!("noise_scale must be positive, got {}", self.noise_scale));
        }
        if let Some(c) = self.noise_ceiling {
            if !c.is_finite() {
                return bad("noise_ceiling must be finite".into());
            }
        }
        if !(self.target_q > 0.0 && self.target_q < 1.0) {
            return bad(format!("target_q must lie in (0, 1), got {}", self.target_q));
        }
        let mut seen = vec![false; self.units];
        for p in &self.planted {
            if p.k >= self.units {
                return bad(format!("planted unit {} is not below K = {}", p.k, self.units));
            }
            if std::mem::replace(&mut seen[p.k], true) {
                return bad(format!("planted unit {} listed twice", p.k));
            }
            for prob in [p.enable_prob_positive, p.enable_prob_negative] {
                if !(0.0..=1.0).contains(&prob) {
                    return bad(format!("unit {}: probability {prob} outside [0, 1]", p.k));
                }
            }
            if self.spatial_shape.iter().any(|&n| n < 2 * p.blob_radius + 1) {
                return bad(format!(
                    "unit {}: blob radius {} does not fit in {:?}",
                    p.k, p.blob_radius, self.spatial_shape
                ));
            }
            let budget = (self.target_q * self.voxels() as f64 + 1e-9).floor() as usize;
            let b = blob_offsets(p.blob_radius).len();
            if b > budget {
                return bad(format!(
                    "unit {}: blob of {b} voxels exceeds the top-quantile budget of {budget} voxels per map",
                    p.k
                ));
            }
            let floor = p.blob_amplitude as f64 * (-0.5f64).exp();
            let limit = match self.noise_ceiling {
                Some(c) => c as f64 * self.noise_scale as f64,
                None => 8.0 * self.noise_scale as f64,
            };
            if floor <= limit {
                return bad(format!(
                    "unit {}: blob amplitude {} does not clear the background ({limit})",
                    p.k, p.blob_amplitude
                ));
            }
        }
        Ok(())
    }
}

fn blob_offsets(radius: usize) -> Vec<[i64; 3]> {
    let r = radius as i64;
    let mut out = Vec::new();
    for dz in -r..=r {
        for dy in -r..=r {
            for dx in -r..=r {
                if dx * dx + dy * dy + dz * dz <= r * r {
                    out.push([dz, dy, dx]);
                }
            }
        }
    }
    out
}

/// Planting decision and blob parameters for one sample-unit pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Blob {
    pub center: [usize; 3],
    pub amplitude: f32,
    pub radius: usize,
}

/// Lazy view over a validated spec. Any sample can be produced on demand.
#[derive(Debug, Clone)]
pub struct Synth {
    spec: PlantSpec,
    planted_by_unit: Vec<Option<usize>>,
}

impl Synth {
    pub fn new(spec: PlantSpec) -> Result<Self, SynthError> {
        spec.validate()?;
        let mut planted_by_unit = vec![None; spec.units];
        for (i, p) in spec.planted.iter().enumerate() {
            planted_by_unit[p.k] = Some(i);
        }
        Ok(Self { spec, planted_by_unit })
    }

    pub fn spec(&self) -> &PlantSpec {
        &self.spec
    }

    pub fn sample_count(&self) -> usize {
        self.spec.samples()
    }

    pub fn sample_id(&self, i: usize) -> String {
        format!("syn{i:05}")
    }

    /// Positives are spread evenly through the sample order.
    pub fn is_positive(&self, i: usize) -> bool {
        let n = self.sample_count();
        let p = self.spec.positives;
        (i + 1) * p / n > i * p / n
    }

    fn rng(&self, sample: usize, lane: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(((sample as u64) << 32) | lane);
        rng
    }

    /// The blob planted for unit `k` in sample `i`, if any.
    pub fn blob(&self, i: usize, k: usize) -> Option<Blob> {
        let p = &self.spec.planted[self.planted_by_unit[k]?];
        let mut rng = self.rng(i, 2 * k as u64);
        let prob = if self.is_positive(i) {
            p.enable_prob_positive
        } else {
            p.enable_prob_negative
        };
        let draw: f64 = rng.random();
        if draw >= prob {
            return None;
        }
        let scale: f32 = rng.random();
        let r = p.blob_radius;
        let center = self.spec.spatial_shape.map(|n| rng.random_range(r..n - r));
        Some(Blob {
            center,
            amplitude: p.blob_amplitude * (1.0 + 0.5 * scale),
            radius: r,
        })
    }

    pub fn unit_map(&self, i: usize, k: usize) -> Vec<f32> {
        let mut rng = self.rng(i, 2 * k as u64 + 1);
        let sigma = self.spec.noise_scale;
        let ceiling = self.spec.noise_ceiling;
        let mut values: Vec<f32> = (0..self.spec.voxels())
            .map(|_| {
                let z: f32 = rng.sample(StandardNormal);
                sigma * ceiling.map_or(z, |c| z.min(c))
            })
            .collect();
        if let Some(b) = self.blob(i, k) {
            let [_, h, w] = self.spec.spatial_shape;
            let width = b.radius as f64 + 0.5;
            for [dz, dy, dx] in blob_offsets(b.radius) {
                let d2 = (dz * dz + dy * dy + dx * dx) as f64;
                let z = (b.center[0] as i64 + dz) as usize;
                let y = (b.center[1] as i64 + dy) as usize;
                let x = (b.center[2] as i64 + dx) as usize;
                values[(z * h + y) * w + x] = (b.amplitude as f64 * (-d2 / (2.0 * width * width)).exp()) as f32;
            }
        }
        values
    }

    pub fn activation(&self, i: usize) -> ActivationVolume {
        let data: Vec<f32> = (0..self.spec.units).flat_map(|k| self.unit_map(i, k)).collect();
        ActivationVolume::new(self.sample_id(i), self.spec.units, self.spec.spatial_shape, data).expect("generated activations are valid")
    }

    pub fn patch(&self, i: usize) -> Option<Volume> {
        if self.spec.patch_size == 0 {
            return None;
        }
        Some(phantom_patch(self.spec.patch_size, self.is_positive(i), &mut self.rng(i, PATCH_LANE)))
    }

    pub fn entry(&self, i: usize) -> SampleEntry {
        let id = self.sample_id(i);
        let positive = self.is_positive(i);
        let labels = VertebraLabel::all().filter(|l| !l.is_cervical()).collect::<Vec<_>>();
        SampleEntry {
            activation_path: format!("activations/{id}.npy"),
            patch_path: (self.spec.patch_size > 0).then(|| format!("patches/{id}.npy")),
            vertebra_label: labels[i % labels.len()],
            fractured: positive,
            predicted_prob: Some(if positive { POSITIVE_PROB } else { NEGATIVE_PROB }),
            split: match i % 10 {
                0..=6 => Split::Train,
                7 | 8 => Split::Val,
                _ => Split::Test,
            },
            sample_id: id,
        }
    }

    pub fn index(&self, base_dir: impl Into<std::path::PathBuf>) -> DatasetIndex {
        DatasetIndex::new((0..self.sample_count()).map(|i| self.entry(i)).collect(), base_dir)
    }

    pub fn ground_truth(&self) -> GroundTruth {
        let n = self.sample_count();
        let units = self
            .spec
            .planted
            .iter()
            .map(|p| {
                let enabled: Vec<bool> = (0..n).map(|i| self.blob(i, p.k).is_some()).collect();
                let positive_enabled = (0..n).filter(|&i| enabled[i] && self.is_positive(i)).count();
                let negative_enabled = (0..n).filter(|&i| enabled[i] && !self.is_positive(i)).count();
                PlantedTruth {
                    k: p.k,
                    enabled,
                    positive_enabled,
                    negative_enabled,
                }
            })
            .collect();
        GroundTruth {
            seed: self.spec.seed,
            sample_ids: (0..n).map(|i| self.sample_id(i)).collect(),
            positives: (0..n).map(|i| self.is_positive(i)).collect(),
            expected_threshold: self.spec.noise_ceiling.map(|c| self.spec.noise_scale * c),
            units,
        }
    }
}

impl ActivationSource for Synth {
    fn len(&self) -> usize {
        self.sample_count()
    }

    fn load(&self, i: usize) -> Result<ActivationVolume> {
        Ok(self.activation(i))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantedTruth {
    pub k: usize,
    /// Whether a blob was planted, per sample in manifest order.
    pub enabled: Vec<bool>,
    /// Numerator of `c_k` under either positive-set policy.
    pub positive_enabled: usize,
    pub negative_enabled: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub seed: u64,
    pub sample_ids: Vec<String>,
    pub positives: Vec<bool>,
    /// Threshold every unit should receive at `target_q` (the clamped ceiling).
    pub expected_threshold: Option<f32>,
    pub units: Vec<PlantedTruth>,
}

/// Writes `manifest.jsonl`, `activations/`, `patches/` and `ground_truth.json`
/// under `out_dir`.
pub fn generate(spec: &PlantSpec, out_dir: &Path) -> Result<(DatasetIndex, GroundTruth)> {
    let synth = Synth::new(spec.clone())?;
    let index = synth.index(out_dir);
    (0..synth.sample_count()).into_par_iter().try_for_each(|i| -> Result<()> {
        let entry = &index.entries[i];
        let a = synth.activation(i);
        write_file(&index.activation_file(entry), &write_tensor(&a.to_tensor()))?;
        if let (Some(patch), Some(path)) = (synth.patch(i), index.patch_file(entry)) {
            let n = spec.patch_size;
            let t = Tensor::from_f32(vec![n, n, n], patch.values().to_vec()).expect("cube");
            write_file(&path, &write_tensor(&t))?;
        }
        Ok(())
    })?;
    write_file(&out_dir.join("manifest.jsonl"), index.to_jsonl().as_bytes())?;
    let truth = synth.ground_truth();
    let json = serde_json::to_vec_pretty(&truth).expect("ground truth serialises");
    write_file(&out_dir.join("ground_truth.json"), &json)?;
    Ok((index, truth))
}
