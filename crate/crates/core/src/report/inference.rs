use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{load_patch, overlay_path, render_overlay, select_slice, write_out, Axis, ReportError, DEFAULT_ALPHA};
use crate::dissect::{relevance_scores, ActivationSource, ActivationVolume, CorrelationRanking, UnitThresholds};
use crate::io::DatasetIndex;
use crate::report::axis_len;
use crate::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSlice {
    pub axis: Axis,
    /// Slice index at native activation resolution.
    pub index: usize,
    /// The same slice on the patch grid, as used by the overlay.
    pub patch_index: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub unit: usize,
    pub relevance_rank: usize,
    pub relevance: f64,
    pub correlation_rank: usize,
    pub slice: ReportSlice,
    pub overlay: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceReport {
    pub sample_id: String,
    pub predicted_prob: Option<f64>,
    pub rows: Vec<ReportRow>,
}

/// Builds the report for one sample: the `n` most relevant units with their
/// relevance and correlation ranks and the highest-activation slice.
pub fn inference_report(
    sample_id: &str,
    dataset: &DatasetIndex,
    t: &UnitThresholds,
    ranking: &CorrelationRanking,
    n: usize,
    axis: Axis,
) -> Result<InferenceReport> {
    let i = dataset
        .entries
        .iter()
        .position(|e| e.sample_id == sample_id)
        .ok_or_else(|| ReportError::UnknownSample(sample_id.to_string()))?;
    let entry = &dataset.entries[i];
    let a = dataset.load(i)?;
    if ranking.units() != a.units() {
        return Err(ReportError::RankingMismatch {
            ranking: ranking.units(),
            activations: a.units(),
        }
        .into());
    }
    let patch = load_patch(dataset, entry, &a)?;
    let patch_len = axis_len(patch_spatial(&patch.volume.dims()), axis);
    let mut report = report_rows(&a, t, ranking, n, axis, patch_len)?;
    report.predicted_prob = entry.predicted_prob;
    Ok(report)
}

/// `[ni, nj, nk]` reordered to the `[D, H, W]` convention of activations.
fn patch_spatial(dims: &[usize; 3]) -> [usize; 3] {
    [dims[2], dims[1], dims[0]]
}

/// Report rows for an already loaded sample whose patch has `patch_len`
/// slices along `axis`. `predicted_prob` is left empty.
pub fn report_rows(
    a: &ActivationVolume,
    t: &UnitThresholds,
    ranking: &CorrelationRanking,
    n: usize,
    axis: Axis,
    patch_len: usize,
) -> Result<InferenceReport, crate::Error> {
    let sample_id = a.sample_id.clone();
    let native_len = axis_len(a.spatial(), axis);
    let relevance = relevance_scores(a, t)?;
    let rows = relevance
        .order
        .iter()
        .take(n)
        .map(|&k| {
            let choice = select_slice(a, k, t.thresholds[k], axis);
            let patch_index = choice.patch_index(native_len, patch_len);
            ReportRow {
                unit: k,
                relevance_rank: relevance.ranks[k],
                relevance: relevance.scores[k],
                correlation_rank: ranking.ranks[k],
                slice: ReportSlice {
                    axis,
                    index: choice.index,
                    patch_index,
                    score: choice.score,
                },
                overlay: overlay_path(&sample_id, k, axis, patch_index),
            }
        })
        .collect();
    Ok(InferenceReport {
        sample_id,
        predicted_prob: None,
        rows,
    })
}

/// Renders every overlay a report refers to under `out_dir`.
pub fn write_report_overlays(report: &InferenceReport, dataset: &DatasetIndex, t: &UnitThresholds, out_dir: &Path) -> Result<()> {
    use rayon::prelude::*;
    let i = dataset
        .entries
        .iter()
        .position(|e| e.sample_id == report.sample_id)
        .ok_or_else(|| ReportError::UnknownSample(report.sample_id.clone()))?;
    let a = dataset.load(i)?;
    let patch = load_patch(dataset, &dataset.entries[i], &a)?;
    report.rows.par_iter().try_for_each(|row| -> Result<()> {
        let img = render_overlay(&patch, &a, row.unit, t.thresholds[row.unit], row.slice.axis, row.slice.patch_index, DEFAULT_ALPHA)?;
        write_out(&out_dir.join(&row.overlay), &img.raster().to_png())?;
        Ok(())
    })
}
