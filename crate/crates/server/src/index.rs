use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use dissect_core::artifacts::{
    read_ranking, read_thresholds, ArtifactError, SampleDetail, SampleList, SampleSummary, TopSamples, UnitDetail, UnitList,
    UnitSummary, BUNDLES_DIR, MANIFEST_FILE, RANKING_FILE, THRESHOLDS_FILE,
};
use dissect_core::dissect::{ActivationSource, ActivationVolume, CorrelationRanking, UnitThresholds};
use dissect_core::io::{load_manifest, nifti, read_tensor_header_file, DatasetIndex, ManifestError, Split};
use dissect_core::prep::PatchVolume;
use dissect_core::report::{
    axis_len, load_patch, render_overlay, render_patch_slice, report_rows, top_activating_samples, unit_dir, Axis,
    InferenceReport, RankedSample, ReportError, UnitBundle, DEFAULT_ALPHA,
};
use thiserror::Error;

/// Environment variable that, when set, replaces the configured artifact directory.
pub const ARTIFACTS_ENV: &str = "DISSECT_ARTIFACTS";

const SAMPLE_CACHE_CAPACITY: usize = 32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServeConfig {
    pub artifacts: PathBuf,
    /// Defaults to `manifest.jsonl` inside the artifact directory.
    pub manifest: Option<PathBuf>,
    /// Static UI assets served under `/`.
    pub ui_dir: Option<PathBuf>,
}

impl ServeConfig {
    pub fn new(artifacts: impl Into<PathBuf>) -> Self {
        Self {
            artifacts: artifacts.into(),
            manifest: None,
            ui_dir: None,
        }
    }

    /// Applies [`ARTIFACTS_ENV`] on top of the configured directory.
    pub fn with_env_override(mut self) -> Self {
        if let Some(dir) = std::env::var_os(ARTIFACTS_ENV).filter(|v| !v.is_empty()) {
            let dir = PathBuf::from(dir);
            if dir != self.artifacts {
                log::info!("{ARTIFACTS_ENV} overrides artifact directory {} with {}", self.artifacts.display(), dir.display());
            }
            self.artifacts = dir;
        }
        self
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("{0}")]
    NotFound(String),
    #[error("{0}")]
    BadRequest(String),
    #[error("{0}")]
    Internal(String),
}

impl From<dissect_core::Error> for ServeError {
    fn from(e: dissect_core::Error) -> Self {
        match e {
            dissect_core::Error::Report(ReportError::SliceOutOfRange { .. } | ReportError::UnknownUnit { .. } | ReportError::UnknownSample(_)) => {
                ServeError::NotFound(e.to_string())
            }
            dissect_core::Error::Report(ReportError::InvalidAlpha(_)) => ServeError::BadRequest(e.to_string()),
            other => ServeError::Internal(other.to_string()),
        }
    }
}

impl From<ReportError> for ServeError {
    fn from(e: ReportError) -> Self {
        dissect_core::Error::from(e).into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum UnitSort {
    #[default]
    Correlation,
    Unit,
}

struct LoadedSample {
    activation: ActivationVolume,
    patch: PatchVolume,
}

/// Everything the service reads, loaded once. The caches are the only
/// mutable state; concurrent inserts store identical values.
pub struct ServingIndex {
    root: PathBuf,
    dataset: DatasetIndex,
    positions: HashMap<String, usize>,
    thresholds: UnitThresholds,
    ranking: CorrelationRanking,
    bundles: HashMap<usize, UnitBundle>,
    ui_dir: Option<PathBuf>,
    reports: RwLock<HashMap<(String, Axis), Arc<InferenceReport>>>,
    top: RwLock<HashMap<(usize, bool), Arc<Vec<RankedSample>>>>,
    samples: RwLock<HashMap<String, Arc<LoadedSample>>>,
}

fn manifest_error(path: &Path, e: ManifestError) -> ArtifactError {
    match e {
        ManifestError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => ArtifactError::MissingArtifact(path.to_path_buf()),
        other => ArtifactError::SchemaViolation {
            file: MANIFEST_FILE.to_string(),
            unit: None,
            reason: other.to_string(),
        },
    }
}

/// Loads and validates `thresholds.json`, `ranking.json`, the manifest and
/// any exported unit bundles.
pub fn build_index(config: &ServeConfig) -> Result<ServingIndex, ArtifactError> {
    let root = config.artifacts.clone();
    let thresholds = read_thresholds(&root.join(THRESHOLDS_FILE))?;
    let ranking = read_ranking(&root.join(RANKING_FILE))?;
    if ranking.units() != thresholds.units() {
        return Err(ArtifactError::SchemaViolation {
            file: RANKING_FILE.to_string(),
            unit: None,
            reason: format!("{} units, but {} has {}", ranking.units(), THRESHOLDS_FILE, thresholds.units()),
        });
    }
    let manifest = config.manifest.clone().unwrap_or_else(|| root.join(MANIFEST_FILE));
    let dataset = load_manifest(&manifest).map_err(|e| manifest_error(&manifest, e))?;
    let positions = dataset.entries.iter().enumerate().map(|(i, e)| (e.sample_id.clone(), i)).collect();

    let mut bundles = HashMap::new();
    for k in 0..thresholds.units() {
        let path = root.join(BUNDLES_DIR).join(unit_dir(k)).join("bundle.json");
        let Ok(bytes) = std::fs::read(&path) else { continue };
        let bundle: UnitBundle = serde_json::from_slice(&bytes).map_err(|e| ArtifactError::SchemaViolation {
            file: format!("{BUNDLES_DIR}/{}/bundle.json", unit_dir(k)),
            unit: Some(k),
            reason: e.to_string(),
        })?;
        if bundle.unit != k {
            return Err(ArtifactError::SchemaViolation {
                file: format!("{BUNDLES_DIR}/{}/bundle.json", unit_dir(k)),
                unit: Some(k),
                reason: format!("bundle describes unit {}", bundle.unit),
            });
        }
        bundles.insert(k, bundle);
    }

    log::info!(
        "serving {} units and {} samples from {}",
        thresholds.units(),
        dataset.len(),
        root.display()
    );
    Ok(ServingIndex {
        root,
        dataset,
        positions,
        thresholds,
        ranking,
        bundles,
        ui_dir: config.ui_dir.clone(),
        reports: RwLock::default(),
        top: RwLock::default(),
        samples: RwLock::default(),
    })
}

/// Sample ids safe to use as a single path component of the overlay cache.
fn cacheable(id: &str) -> bool {
    !id.is_empty() && !id.starts_with('.') && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    use std::io::Write;
    let dir = path.parent().unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

impl ServingIndex {
    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dataset(&self) -> &DatasetIndex {
        &self.dataset
    }

    pub fn thresholds(&self) -> &UnitThresholds {
        &self.thresholds
    }

    pub fn ranking(&self) -> &CorrelationRanking {
        &self.ranking
    }

    pub fn ui_dir(&self) -> Option<&Path> {
        self.ui_dir.as_deref()
    }

    pub fn units(&self) -> usize {
        self.thresholds.units()
    }

    fn position(&self, id: &str) -> Result<usize, ServeError> {
        self.positions
            .get(id)
            .copied()
            .ok_or_else(|| ServeError::NotFound(format!("unknown sample {id}")))
    }

    fn check_unit(&self, k: usize) -> Result<(), ServeError> {
        if k < self.units() {
            Ok(())
        } else {
            Err(ServeError::NotFound(format!("unknown unit {k}, the layer has {} units", self.units())))
        }
    }

    fn summary(&self, k: usize) -> UnitSummary {
        UnitSummary {
            k,
            c: self.ranking.scores[k],
            rank: self.ranking.ranks[k],
            threshold: self.thresholds.thresholds[k],
            population: self.thresholds.population[k],
        }
    }

    pub fn unit_list(&self, sort: UnitSort, offset: usize, limit: Option<usize>) -> UnitList {
        let order: Box<dyn Iterator<Item = usize>> = match sort {
            UnitSort::Correlation => Box::new(self.ranking.order.iter().copied()),
            UnitSort::Unit => Box::new(0..self.units()),
        };
        UnitList {
            total: self.units(),
            units: order.skip(offset).take(limit.unwrap_or(usize::MAX)).map(|k| self.summary(k)).collect(),
        }
    }

    pub fn unit_detail(&self, k: usize) -> Result<UnitDetail, ServeError> {
        self.check_unit(k)?;
        let bundle = self.bundles.get(&k);
        Ok(UnitDetail {
            summary: self.summary(k),
            policy: self.ranking.policy,
            positive_count: self.ranking.positive_count,
            no_significant_activations: bundle.map(|b| b.no_significant_activations),
            bundle: bundle.map(|_| format!("{BUNDLES_DIR}/{}/bundle.json", unit_dir(k))),
        })
    }

    /// Samples by descending relevance for unit `k`. The full ordering is
    /// computed on first use and memoised.
    pub fn top_samples(&self, k: usize, n: usize, fractured_only: bool) -> Result<TopSamples, ServeError> {
        self.check_unit(k)?;
        let cached = self.top.read().expect("cache lock").get(&(k, fractured_only)).cloned();
        let all = match cached {
            Some(v) => v,
            None => {
                let v = Arc::new(top_activating_samples(k, &self.dataset, &self.thresholds, usize::MAX, fractured_only)?);
                self.top.write().expect("cache lock").insert((k, fractured_only), v.clone());
                v
            }
        };
        Ok(TopSamples {
            unit: k,
            fractured_only,
            samples: all.iter().take(n).cloned().collect(),
        })
    }

    pub fn sample_list(&self, offset: usize, limit: Option<usize>, split: Split) -> SampleList {
        let matching: Vec<_> = self
            .dataset
            .entries
            .iter()
            .filter(|e| split == Split::All || e.split == split)
            .collect();
        SampleList {
            total: matching.len(),
            samples: matching
                .into_iter()
                .skip(offset)
                .take(limit.unwrap_or(usize::MAX))
                .map(SampleSummary::from)
                .collect(),
        }
    }

    pub fn sample_detail(&self, id: &str) -> Result<SampleDetail, ServeError> {
        let entry = &self.dataset.entries[self.position(id)?];
        let header = read_tensor_header_file(&self.dataset.activation_file(entry))?;
        let (units, spatial_shape) = match header.shape[..] {
            [k, d, h, w] => (k, [d, h, w]),
            [k, h, w] => (k, [1, h, w]),
            _ => return Err(ServeError::Internal(format!("{id}: activation shape {:?} is not 3-D or 4-D", header.shape))),
        };
        let patch_shape = match self.dataset.patch_file(entry) {
            None => None,
            Some(path) if path.to_string_lossy().ends_with(".nii") => {
                use std::io::Read;
                let mut buf = Vec::new();
                std::fs::File::open(&path)
                    .and_then(|f| f.take(348).read_to_end(&mut buf))
                    .map_err(|e| ServeError::Internal(format!("{}: {e}", path.display())))?;
                let h = nifti::read_header(&buf).map_err(|e| ServeError::Internal(format!("{}: {e}", path.display())))?;
                Some([h.dims[2], h.dims[1], h.dims[0]])
            }
            Some(path) => {
                let h = read_tensor_header_file(&path)?;
                let [d, hh, w] = h.shape[..] else {
                    return Err(ServeError::Internal(format!("{id}: patch shape {:?} is not 3-D", h.shape)));
                };
                Some([d, hh, w])
            }
        };
        Ok(SampleDetail {
            summary: SampleSummary::from(entry),
            units,
            spatial_shape,
            patch_shape,
        })
    }

    fn loaded(&self, id: &str) -> Result<Arc<LoadedSample>, ServeError> {
        if let Some(s) = self.samples.read().expect("cache lock").get(id) {
            return Ok(s.clone());
        }
        let i = self.position(id)?;
        let activation = self.dataset.load(i)?;
        self.thresholds.check_units(&activation).map_err(dissect_core::Error::from)?;
        let patch = load_patch(&self.dataset, &self.dataset.entries[i], &activation)?;
        let loaded = Arc::new(LoadedSample { activation, patch });
        let mut cache = self.samples.write().expect("cache lock");
        if cache.len() >= SAMPLE_CACHE_CAPACITY {
            if let Some(victim) = cache.keys().next().cloned() {
                cache.remove(&victim);
            }
        }
        cache.insert(id.to_string(), loaded.clone());
        Ok(loaded)
    }

    /// The inference report for `id` with its `top` most relevant units, as
    /// written by `dissect report`.
    pub fn report(&self, id: &str, top: usize, axis: Axis) -> Result<InferenceReport, ServeError> {
        let key = (id.to_string(), axis);
        let cached = self.reports.read().expect("cache lock").get(&key).cloned();
        let full = match cached {
            Some(r) => r,
            None => {
                let s = self.loaded(id)?;
                let dims = s.patch.volume.dims();
                let patch_len = axis_len([dims[2], dims[1], dims[0]], axis);
                let mut r = report_rows(&s.activation, &self.thresholds, &self.ranking, self.units(), axis, patch_len)?;
                r.predicted_prob = self.dataset.entries[self.position(id)?].predicted_prob;
                let r = Arc::new(r);
                self.reports.write().expect("cache lock").insert(key, r.clone());
                r
            }
        };
        Ok(InferenceReport {
            sample_id: full.sample_id.clone(),
            predicted_prob: full.predicted_prob,
            rows: full.rows.iter().take(top).cloned().collect(),
        })
    }

    fn overlay_cache_path(&self, id: &str, k: usize, axis: Axis, slice: usize, alpha: f64) -> Option<PathBuf> {
        if !cacheable(id) {
            return None;
        }
        let name = if alpha == DEFAULT_ALPHA {
            format!("{slice}.png")
        } else {
            format!("{slice}_a{alpha}.png")
        };
        Some(self.root.join("overlays").join(id).join(k.to_string()).join(axis.as_str()).join(name))
    }

    /// Overlay PNG, rendered on first request and then read from the
    /// on-disk cache under `overlays/`.
    pub fn overlay_png(&self, id: &str, k: usize, axis: Axis, slice: usize, alpha: f64) -> Result<Vec<u8>, ServeError> {
        self.position(id)?;
        self.check_unit(k)?;
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(ServeError::BadRequest(format!("alpha must lie in (0, 1], got {alpha}")));
        }
        let cache = self.overlay_cache_path(id, k, axis, slice, alpha);
        if let Some(bytes) = cache.as_ref().and_then(|p| std::fs::read(p).ok()) {
            return Ok(bytes);
        }
        let s = self.loaded(id)?;
        let img = render_overlay(&s.patch, &s.activation, k, self.thresholds.thresholds[k], axis, slice, alpha)?;
        let png = img.raster().to_png();
        if let Some(path) = cache {
            if let Err(e) = write_atomic(&path, &png) {
                log::warn!("could not cache overlay {}: {e}", path.display());
            }
        }
        Ok(png)
    }

    pub fn patch_png(&self, id: &str, axis: Axis, slice: usize) -> Result<Vec<u8>, ServeError> {
        let s = self.loaded(id)?;
        let dims = s.patch.volume.dims();
        let bound = axis_len([dims[2], dims[1], dims[0]], axis);
        if slice >= bound {
            return Err(ReportError::SliceOutOfRange { axis, index: slice, bound }.into());
        }
        Ok(render_patch_slice(&s.patch, axis, slice).to_png())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cache_keys_reject_path_components() {
        assert!(cacheable("syn00012"));
        assert!(cacheable("v001_L1.a"));
        for bad in ["", "..", "../x", "a/b", ".hidden", "a\\b", "ü"] {
            assert!(!cacheable(bad), "{bad}");
        }
    }
}
