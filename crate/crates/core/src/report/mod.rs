//! Visual explanations: top units and samples, high-activation slices, heatmap
//! overlays, collages, per-unit export bundles and single-inference reports.

mod bundle;
mod inference;
mod render;
mod select;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bundle::{export_unit_bundle, unit_dir, BundleOptions, CollageEntry, SampleExport, UnitBundle};
pub use inference::{inference_report, report_rows, write_report_overlays, InferenceReport, ReportRow, ReportSlice};
pub use render::{
    build_collage, colormap, render_overlay, render_patch_slice, OverlayImage, Raster, SlicePlane, Upsampler, COLLAGE_SEPARATOR,
    DEFAULT_ALPHA,
};
pub use select::{
    axis_len, patch_slice_index, select_slice, top_activating_samples, top_correlated_units, RankedSample, SliceChoice,
    DEFAULT_TOP_SAMPLES, DEFAULT_TOP_UNITS,
};

use crate::dissect::ActivationVolume;
use crate::io::{read_nifti_file, read_tensor_file, DatasetIndex, IntensityUnit, SampleEntry, Volume};
use crate::prep::{normalize_hu, PatchVolume};

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("patch belongs to {patch} but activations to {activation}")]
    SampleMismatch { patch: String, activation: String },
    #[error("unknown sample {0}")]
    UnknownSample(String),
    #[error("unknown unit {unit}, the layer has {units} units")]
    UnknownUnit { unit: usize, units: usize },
    #[error("collage tiles must be {expected:?}, found {found:?}")]
    MixedDimensions { expected: (usize, usize), found: (usize, usize) },
    #[error("{images} images do not fit in {cells} collage cells")]
    TooManyImages { images: usize, cells: usize },
    #[error("overlay alpha must lie in (0, 1], got {0}")]
    InvalidAlpha(f64),
    #[error("{axis} slice {index} is outside 0..{bound}")]
    SliceOutOfRange { axis: Axis, index: usize, bound: usize },
    #[error("ranking covers {ranking} units but activations have {activations}")]
    RankingMismatch { ranking: usize, activations: usize },
    #[error("{path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Slicing axis. Axial slices fix the superior-inferior coordinate (`D`),
/// coronal slices the anterior-posterior one (`H`) and sagittal slices the
/// lateral one (`W`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    #[default]
    Sagittal,
    Coronal,
    Axial,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Axis::Sagittal => "sagittal",
            Axis::Coronal => "coronal",
            Axis::Axial => "axial",
        }
    }
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "sagittal" => Ok(Axis::Sagittal),
            "coronal" => Ok(Axis::Coronal),
            "axial" => Ok(Axis::Axial),
            other => Err(format!("unknown axis {other:?}, expected sagittal, coronal or axial")),
        }
    }
}

/// Relative location of a default-alpha overlay, shared by the CLI output
/// tree and the HTTP routes.
pub fn overlay_path(sample_id: &str, unit: usize, axis: Axis, slice: usize) -> String {
    format!("overlays/{sample_id}/{unit}/{axis}/{slice}.png")
}

pub(crate) fn write_out(path: &Path, bytes: &[u8]) -> Result<(), ReportError> {
    let fail = |source| ReportError::IoFailure {
        path: path.to_path_buf(),
        source,
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(fail)?;
    }
    std::fs::write(path, bytes).map_err(fail)
}

/// Loads the patch of `entry`. NPY patches are `(D, H, W)` cubes already in
/// `[0, 1]`; NIfTI patches in HU are windowed on load. Samples without a
/// patch get a black volume on the native activation grid so overlays can
/// still be drawn.
pub fn load_patch(dataset: &DatasetIndex, entry: &SampleEntry, a: &ActivationVolume) -> crate::Result<PatchVolume> {
    let Some(path) = dataset.patch_file(entry) else {
        let [d, h, w] = a.spatial();
        let v = Volume::identity([w, h, d], vec![0.0; w * h * d], IntensityUnit::Normalized)?;
        return Ok(PatchVolume::new(v, &entry.sample_id, entry.vertebra_label)?);
    };
    let name = path.to_string_lossy();
    let volume = if name.ends_with(".nii") {
        let v = read_nifti_file(&path)?;
        if v.intensity_unit == IntensityUnit::Hu {
            normalize_hu(&v)
        } else {
            v
        }
    } else {
        let t = read_tensor_file(&path)?;
        let (shape, data) = t.into_parts();
        let [nk, nj, ni] = shape[..] else {
            return Err(crate::Error::Tensor {
                path,
                source: crate::io::TensorError::InvalidTensor(format!("patch must be 3-D, got shape {shape:?}")),
            });
        };
        Volume::identity([ni, nj, nk], data.into_f32(), IntensityUnit::Normalized)?
    };
    Ok(PatchVolume::new(volume, &entry.sample_id, entry.vertebra_label)?)
}
