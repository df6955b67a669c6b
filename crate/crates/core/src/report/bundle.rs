use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    axis_len, build_collage, load_patch, patch_slice_index, render_overlay, select_slice, top_activating_samples, write_out, Axis,
    ReportError, SliceChoice, Upsampler, DEFAULT_ALPHA, DEFAULT_TOP_SAMPLES,
};
use crate::dissect::{ActivationSource, CorrelationRanking, UnitThresholds};
use crate::io::{write_nifti, DatasetIndex, IntensityUnit, Volume};
use crate::prep::DEFAULT_PATCH_SIZE;
use crate::Result;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BundleOptions {
    /// Samples in the collage.
    pub top_samples: usize,
    /// Samples exported in full (every slice plus a NIfTI volume).
    pub full_exports: usize,
    pub grid: (usize, usize),
    pub axis: Axis,
    pub alpha: f64,
}

impl Default for BundleOptions {
    fn default() -> Self {
        Self {
            top_samples: DEFAULT_TOP_SAMPLES,
            full_exports: 5,
            grid: (5, 5),
            axis: Axis::default(),
            alpha: DEFAULT_ALPHA,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollageEntry {
    pub sample_id: String,
    pub relevance: f64,
    pub slice: SliceChoice,
    pub patch_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleExport {
    pub sample_id: String,
    pub relevance: f64,
    pub slices: Vec<String>,
    pub activation_nifti: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitBundle {
    pub unit: usize,
    pub correlation_rank: Option<usize>,
    pub correlation: Option<f64>,
    pub axis: Axis,
    /// Set when no fractured sample has a single voxel above the unit threshold.
    pub no_significant_activations: bool,
    pub collage: String,
    pub collage_samples: Vec<CollageEntry>,
    pub exports: Vec<SampleExport>,
}

pub fn unit_dir(k: usize) -> String {
    format!("unit_{k}")
}

/// Writes `unit_{k}/collage.png`, `unit_{k}/bundle.json` and, for the
/// strongest samples, `unit_{k}/sample_{id}/slice_{i}.png` plus
/// `unit_{k}/sample_{id}/activation.nii`. Any previous export of the unit is
/// replaced.
pub fn export_unit_bundle(
    k: usize,
    dataset: &DatasetIndex,
    t: &UnitThresholds,
    ranking: Option<&CorrelationRanking>,
    out_dir: &Path,
    opts: &BundleOptions,
) -> Result<UnitBundle> {
    if k >= t.units() {
        return Err(ReportError::UnknownUnit { unit: k, units: t.units() }.into());
    }
    let root = out_dir.join(unit_dir(k));
    if root.exists() {
        std::fs::remove_dir_all(&root).map_err(|e| ReportError::IoFailure { path: root.clone(), source: e })?;
    }
    let (rows, cols) = opts.grid;
    let top = top_activating_samples(k, dataset, t, opts.top_samples.min(rows * cols), true)?;
    let position = |id: &str| dataset.entries.iter().position(|e| e.sample_id == id).expect("sample from this dataset");

    let rendered = top
        .par_iter()
        .map(|s| {
            let i = position(&s.sample_id);
            let a = dataset.load(i)?;
            let patch = load_patch(dataset, &dataset.entries[i], &a)?;
            let choice = select_slice(&a, k, t.thresholds[k], opts.axis);
            let patch_len = axis_len([patch.volume.dims()[2], patch.volume.dims()[1], patch.volume.dims()[0]], opts.axis);
            let patch_index = patch_slice_index(choice.index, axis_len(a.spatial(), opts.axis), patch_len);
            let img = render_overlay(&patch, &a, k, t.thresholds[k], opts.axis, patch_index, opts.alpha)?;
            Ok((
                CollageEntry {
                    sample_id: s.sample_id.clone(),
                    relevance: s.relevance,
                    slice: choice,
                    patch_index,
                },
                img.rendered.expect("rendered overlay"),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let cell = rendered
        .first()
        .map(|(_, r)| (r.width, r.height))
        .unwrap_or((DEFAULT_PATCH_SIZE, DEFAULT_PATCH_SIZE));
    let images: Vec<_> = rendered.iter().map(|(_, r)| r.clone()).collect();
    let collage = build_collage(&images, rows, cols, cell)?;
    write_out(&root.join("collage.png"), &collage.to_png())?;

    let mut exports = Vec::new();
    for s in top.iter().take(opts.full_exports) {
        let i = position(&s.sample_id);
        let a = dataset.load(i)?;
        let patch = load_patch(dataset, &dataset.entries[i], &a)?;
        let dims = patch.volume.dims();
        let n = axis_len([dims[2], dims[1], dims[0]], opts.axis);
        let dir = format!("{}/sample_{}", unit_dir(k), s.sample_id);
        let slices: Vec<String> = (0..n).map(|idx| format!("{dir}/slice_{idx}.png")).collect();
        slices.par_iter().enumerate().try_for_each(|(idx, rel)| -> Result<()> {
            let img = render_overlay(&patch, &a, k, t.thresholds[k], opts.axis, idx, opts.alpha)?;
            write_out(&out_dir.join(rel), &img.raster().to_png())?;
            Ok(())
        })?;
        let up = Upsampler::new(&a, k, dims).volume();
        let v = &patch.volume;
        let vol = Volume::new(dims, up, v.spacing_mm, v.origin_mm, v.axis_directions, IntensityUnit::Raw)?;
        let nifti = format!("{dir}/activation.nii");
        write_out(&out_dir.join(&nifti), &write_nifti(&vol))?;
        exports.push(SampleExport {
            sample_id: s.sample_id.clone(),
            relevance: s.relevance,
            slices,
            activation_nifti: nifti,
        });
    }

    let bundle = UnitBundle {
        unit: k,
        correlation_rank: ranking.and_then(|r| r.rank_of(k)),
        correlation: ranking.and_then(|r| r.scores.get(k).copied()),
        axis: opts.axis,
        no_significant_activations: top.first().is_none_or(|s| s.relevance == 0.0),
        collage: format!("{}/collage.png", unit_dir(k)),
        collage_samples: rendered.into_iter().map(|(e, _)| e).collect(),
        exports,
    };
    let json = serde_json::to_vec_pretty(&bundle).expect("bundle serialises");
    write_out(&root.join("bundle.json"), &json)?;
    Ok(bundle)
}
