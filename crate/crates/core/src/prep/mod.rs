//! Vertebra patch preparation: spline-aligned resampling, HU windowing and
//! cervical exclusion.

mod patch;
mod spline;

use std::path::Path;

use thiserror::Error;

pub use patch::{
    extract_patch, patch_frame, resample_patch, PatchFrame, PatchVolume, DEFAULT_PATCH_SIZE,
    DEFAULT_PATCH_SPACING_MM, OUTSIDE_HU,
};
pub use spline::{build_spline, Centroid, CentroidFile, CentroidSet, SpineSpline};

use crate::io::{DatasetIndex, IntensityUnit, VertebraLabel, Volume, VolumeError};

pub const HU_MIN: f32 = -1000.0;
pub const HU_MAX: f32 = 1000.0;

#[derive(Debug, Error)]
pub enum PrepError {
    #[error("invalid centroids: {0}")]
    InvalidCentroids(String),
    #[error("centroids {first} and {second} coincide")]
    DegenerateCentroids {
        first: VertebraLabel,
        second: VertebraLabel,
    },
    #[error("vertebra {0} is not on the spline")]
    LabelNotFound(VertebraLabel),
    #[error("invalid patch geometry: size {size}, spacing {spacing_mm} mm")]
    InvalidPatchGeometry { size: usize, spacing_mm: f64 },
    #[error("patch intensities must lie in [0, 1]")]
    NotNormalized,
    #[error(transparent)]
    Volume(#[from] VolumeError),
}

/// Clamps one HU value to `[-1000, 1000]` and rescales it to `[0, 1]`.
/// `NaN` is treated as air.
pub fn normalize_hu_value(hu: f32) -> f32 {
    if hu.is_nan() {
        return 0.0;
    }
    (hu.clamp(HU_MIN, HU_MAX) - HU_MIN) / (HU_MAX - HU_MIN)
}

pub fn normalize_hu(raw: &Volume) -> Volume {
    let values = raw.values().iter().map(|&v| normalize_hu_value(v)).collect();
    Volume::new(
        raw.dims(),
        values,
        raw.spacing_mm,
        raw.origin_mm,
        raw.axis_directions,
        IntensityUnit::Normalized,
    )
    .expect("geometry already validated")
}

/// Drops C1–C7, keeping the order of the remaining entries.
pub fn filter_vertebrae(idx: &DatasetIndex) -> DatasetIndex {
    DatasetIndex {
        entries: idx
            .entries
            .iter()
            .filter(|e| !e.vertebra_label.is_cervical())
            .cloned()
            .collect(),
        base_dir: idx.base_dir.clone(),
    }
}

pub fn load_centroids(path: &Path) -> crate::Result<CentroidSet> {
    let text = std::fs::read_to_string(path).map_err(|e| crate::Error::io(path, e))?;
    let file: CentroidFile = serde_json::from_str(&text).map_err(|e| crate::Error::json(path, e))?;
    Ok(CentroidSet::new(file.centroids)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{SampleEntry, Split};
    use proptest::prelude::*;

    #[test]
    fn hu_window_fixed_points() {
        let cases = [(-1500.0, 0.0), (-1000.0, 0.0), (0.0, 0.5), (1000.0, 1.0), (2000.0, 1.0)];
        for (hu, expected) in cases {
            assert_eq!(normalize_hu_value(hu), expected, "{hu}");
        }
    }

    proptest! {
        #[test]
        fn hu_window_monotone_and_bounded(a in -1e6f32..1e6, b in -1e6f32..1e6) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (x, y) = (normalize_hu_value(lo), normalize_hu_value(hi));
            prop_assert!((0.0..=1.0).contains(&x));
            prop_assert!((0.0..=1.0).contains(&y));
            prop_assert!(x <= y);
        }
    }

    fn index(labels: &[&str]) -> DatasetIndex {
        DatasetIndex::new(
            labels
                .iter()
                .enumerate()
                .map(|(i, l)| SampleEntry {
                    sample_id: format!("s{i}"),
                    vertebra_label: l.parse().unwrap(),
                    fractured: false,
                    predicted_prob: None,
                    activation_path: format!("s{i}.npy"),
                    patch_path: None,
                    split: Split::All,
                })
                .collect(),
            ".",
        )
    }

    fn labels(idx: &DatasetIndex) -> Vec<String> {
        idx.entries.iter().map(|e| e.vertebra_label.to_string()).collect()
    }

    #[test]
    fn cervical_filtering() {
        assert_eq!(labels(&filter_vertebrae(&index(&["C2", "T5", "L1"]))), ["T5", "L1"]);
        assert!(filter_vertebrae(&index(&["C1", "C7"])).is_empty());
        let clean = index(&["L2", "T1", "T12"]);
        let once = filter_vertebrae(&clean);
        assert_eq!(once, clean);
        assert_eq!(filter_vertebrae(&once), once);
    }
}
