//! JSON documents written by the batch commands and served over HTTP.
//!
//! Both sides serialise through [`to_json`], so a file exported by the CLI and
//! the matching API response body are byte-identical.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dissect::{CorrelationRanking, Estimator, PositivePolicy, RelevanceRanking, UnitThresholds};
use crate::io::{SampleEntry, Split, VertebraLabel};
use crate::report::RankedSample;

pub const THRESHOLDS_FILE: &str = "thresholds.json";
pub const RANKING_FILE: &str = "ranking.json";
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const REPORTS_DIR: &str = "reports";
pub const BUNDLES_DIR: &str = "bundles";

#[derive(Debug, Error)]
pub enum ArtifactError {
    #[error("missing artifact {0}")]
    MissingArtifact(PathBuf),
    #[error("{file}: {reason}")]
    SchemaViolation {
        file: String,
        unit: Option<usize>,
        reason: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ArtifactError {
    fn schema(file: &str, unit: Option<usize>, reason: impl Into<String>) -> Self {
        ArtifactError::SchemaViolation {
            file: file.to_string(),
            unit,
            reason: reason.into(),
        }
    }
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("artifact types serialise");
    out.push(b'\n');
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdEntry {
    pub k: usize,
    pub threshold: f32,
    pub population: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdsDoc {
    pub q: f64,
    pub estimator: Estimator,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spatial_shape: Option<[usize; 3]>,
    pub units: Vec<ThresholdEntry>,
}

impl From<&UnitThresholds> for ThresholdsDoc {
    fn from(t: &UnitThresholds) -> Self {
        Self {
            q: t.q,
            estimator: t.estimator,
            spatial_shape: Some(t.spatial),
            units: t
                .thresholds
                .iter()
                .zip(&t.population)
                .enumerate()
                .map(|(k, (&threshold, &population))| ThresholdEntry { k, threshold, population })
                .collect(),
        }
    }
}

impl ThresholdsDoc {
    pub fn into_thresholds(self) -> Result<UnitThresholds, ArtifactError> {
        let file = THRESHOLDS_FILE;
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(ArtifactError::schema(file, None, format!("q = {} outside (0, 1)", self.q)));
        }
        if self.units.is_empty() {
            return Err(ArtifactError::schema(file, None, "no units"));
        }
        for (i, u) in self.units.iter().enumerate() {
            if u.k != i {
                return Err(ArtifactError::schema(file, Some(u.k), format!("entry {i} has k = {}", u.k)));
            }
            if !u.threshold.is_finite() {
                return Err(ArtifactError::schema(file, Some(u.k), "threshold is not finite"));
            }
            if u.population == 0 {
                return Err(ArtifactError::schema(file, Some(u.k), "population is zero"));
            }
        }
        Ok(UnitThresholds {
            q: self.q,
            estimator: self.estimator,
            thresholds: self.units.iter().map(|u| u.threshold).collect(),
            population: self.units.iter().map(|u| u.population).collect(),
            spatial: self.spatial_shape.unwrap_or([0; 3]),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingEntry {
    pub k: usize,
    pub c: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingDoc {
    pub policy: PositivePolicy,
    pub positive_count: usize,
    /// Sorted by rank.
    pub units: Vec<RankingEntry>,
}

impl From<&CorrelationRanking> for RankingDoc {
    fn from(r: &CorrelationRanking) -> Self {
        Self {
            policy: r.policy,
            positive_count: r.positive_count,
            units: r
                .order
                .iter()
                .map(|&k| RankingEntry {
                    k,
                    c: r.scores[k],
                    rank: r.ranks[k],
                })
                .collect(),
        }
    }
}

impl RankingDoc {
    pub fn into_ranking(self) -> Result<CorrelationRanking, ArtifactError> {
        let file = RANKING_FILE;
        let n = self.units.len();
        if self.positive_count == 0 {
            return Err(ArtifactError::schema(file, None, "positive_count is zero"));
        }
        let mut scores = vec![f64::NAN; n];
        let mut ranks = vec![0; n];
        let mut order = Vec::with_capacity(n);
        for (i, u) in self.units.iter().enumerate() {
            if u.k >= n || !scores[u.k].is_nan() {
                return Err(ArtifactError::schema(file, Some(u.k), "unit index out of range or repeated"));
            }
            if u.rank != i + 1 {
                return Err(ArtifactError::schema(file, Some(u.k), format!("rank {} at position {}", u.rank, i + 1)));
            }
            if !(0.0..=1.0).contains(&u.c) {
                return Err(ArtifactError::schema(file, Some(u.k), format!("c = {} outside [0, 1]", u.c)));
            }
            scores[u.k] = u.c;
            ranks[u.k] = u.rank;
            order.push(u.k);
        }
        let enabled_counts = scores.iter().map(|c| (c * self.positive_count as f64).round() as u64).collect();
        let ranking = CorrelationRanking::from_counts(self.policy, self.positive_count, enabled_counts);
        if ranking.order != order {
            return Err(ArtifactError::schema(file, None, "units are not in descending c order"));
        }
        Ok(CorrelationRanking {
            scores,
            ranks,
            order,
            ..ranking
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceEntry {
    pub k: usize,
    pub r: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelevanceDoc {
    pub sample_id: String,
    pub units: Vec<RelevanceEntry>,
}

impl From<&RelevanceRanking> for RelevanceDoc {
    fn from(r: &RelevanceRanking) -> Self {
        Self {
            sample_id: r.sample_id.clone(),
            units: r
                .order
                .iter()
                .map(|&k| RelevanceEntry {
                    k,
                    r: r.scores[k],
                    rank: r.ranks[k],
                })
                .collect(),
        }
    }
}

fn read_doc<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, ArtifactError> {
    let file = path.file_name().map_or_else(|| path.display().to_string(), |f| f.to_string_lossy().into_owned());
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(ArtifactError::MissingArtifact(path.to_path_buf())),
        Err(e) => {
            return Err(ArtifactError::Io {
                path: path.to_path_buf(),
                source: e,
            })
        }
    };
    serde_json::from_slice(&bytes).map_err(|e| ArtifactError::schema(&file, None, e.to_string()))
}

pub fn read_thresholds(path: &Path) -> Result<UnitThresholds, ArtifactError> {
    read_doc::<ThresholdsDoc>(path)?.into_thresholds()
}

pub fn read_ranking(path: &Path) -> Result<CorrelationRanking, ArtifactError> {
    read_doc::<RankingDoc>(path)?.into_ranking()
}

pub fn thresholds_json(t: &UnitThresholds) -> Vec<u8> {
    to_json(&ThresholdsDoc::from(t))
}

pub fn ranking_json(r: &CorrelationRanking) -> Vec<u8> {
    to_json(&RankingDoc::from(r))
}

/// One row of `GET /api/units`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitSummary {
    pub k: usize,
    pub c: f64,
    pub rank: usize,
    pub threshold: f32,
    pub population: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitList {
    pub total: usize,
    pub units: Vec<UnitSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitDetail {
    #[serde(flatten)]
    pub summary: UnitSummary,
    pub policy: PositivePolicy,
    pub positive_count: usize,
    /// Present when a bundle was exported for the unit.
    pub no_significant_activations: Option<bool>,
    pub bundle: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopSamples {
    pub unit: usize,
    pub fractured_only: bool,
    pub samples: Vec<RankedSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleSummary {
    pub sample_id: String,
    pub vertebra_label: VertebraLabel,
    pub fractured: bool,
    pub predicted_prob: Option<f64>,
    pub split: Split,
    pub has_patch: bool,
}

impl From<&SampleEntry> for SampleSummary {
    fn from(e: &SampleEntry) -> Self {
        Self {
            sample_id: e.sample_id.clone(),
            vertebra_label: e.vertebra_label,
            fractured: e.fractured,
            predicted_prob: e.predicted_prob,
            split: e.split,
            has_patch: e.patch_path.is_some(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleList {
    pub total: usize,
    pub samples: Vec<SampleSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleDetail {
    #[serde(flatten)]
    pub summary: SampleSummary,
    pub units: usize,
    /// Native activation grid `[D, H, W]`.
    pub spatial_shape: [usize; 3],
    /// Patch grid `[D, H, W]`, when a patch exists.
    pub patch_shape: Option<[usize; 3]>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn thresholds() -> UnitThresholds {
        UnitThresholds {
            q: 0.005,
            estimator: Estimator::Exact,
            thresholds: vec![0.1, 1.0 / 3.0, -2.5],
            population: vec![40; 3],
            spatial: [2, 4, 5],
        }
    }

    #[test]
    fn thresholds_round_trip() {
        let t = thresholds();
        let json = thresholds_json(&t);
        let back: ThresholdsDoc = serde_json::from_slice(&json).unwrap();
        assert_eq!(back.into_thresholds().unwrap(), t);
        let text = String::from_utf8(json).unwrap();
        assert!(text.contains("\"estimator\": \"exact\""));
    }

    #[test]
    fn corrupt_threshold_names_the_unit() {
        let mut doc = ThresholdsDoc::from(&thresholds());
        doc.units[2].population = 0;
        assert!(matches!(
            doc.into_thresholds(),
            Err(ArtifactError::SchemaViolation { unit: Some(2), .. })
        ));
        let mut doc = ThresholdsDoc::from(&thresholds());
        doc.units[1].k = 7;
        assert!(doc.into_thresholds().is_err());
    }

    #[test]
    fn ranking_round_trip() {
        let r = CorrelationRanking::from_counts(PositivePolicy::TruePositive, 7, vec![3, 7, 0, 3, 1]);
        let json = ranking_json(&r);
        let back = serde_json::from_slice::<RankingDoc>(&json).unwrap().into_ranking().unwrap();
        assert_eq!(back, r);
        assert_eq!(ranking_json(&back), json);
    }

    #[test]
    fn ranking_validation() {
        let r = CorrelationRanking::from_counts(PositivePolicy::GroundTruthPositive, 4, vec![1, 2, 3]);
        let mut doc = RankingDoc::from(&r);
        doc.units.swap(0, 1);
        assert!(doc.clone().into_ranking().is_err());
        doc.units.swap(0, 1);
        doc.units[1].c = 1.5;
        assert!(matches!(doc.into_ranking(), Err(ArtifactError::SchemaViolation { unit: Some(1), .. })));
    }

    #[test]
    fn missing_file() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            read_ranking(&dir.path().join(RANKING_FILE)),
            Err(ArtifactError::MissingArtifact(_))
        ));
    }
}
