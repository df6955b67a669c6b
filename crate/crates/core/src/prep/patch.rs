use nalgebra::{Matrix3, Point3, Vector3};
use rayon::prelude::*;

use super::{normalize_hu, PrepError, SpineSpline};
use crate::io::{VertebraLabel, Volume};

/// Fill value for samples outside the source volume (air).
pub const OUTSIDE_HU: f32 = -1000.0;

pub const DEFAULT_PATCH_SIZE: usize = 96;
pub const DEFAULT_PATCH_SPACING_MM: f64 = 1.0;

/// World "anterior" direction used to fix the in-plane rotation of a patch.
const ANTERIOR: Vector3<f64> = Vector3::new(0.0, 1.0, 0.0);

/// A normalised, vertebra-centred patch.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchVolume {
    pub volume: Volume,
    pub sample_id: String,
    pub vertebra_label: VertebraLabel,
}

impl PatchVolume {
    pub fn new(volume: Volume, sample_id: impl Into<String>, vertebra_label: VertebraLabel) -> Result<Self, PrepError> {
        if volume.values().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(PrepError::NotNormalized);
        }
        Ok(Self {
            volume,
            sample_id: sample_id.into(),
            vertebra_label,
        })
    }
}

/// Orthonormal patch frame at a centroid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchFrame {
    pub center: Point3<f64>,
    /// Columns: in-plane lateral axis (i), anterior-posterior axis (j) and the
    /// vertical spine axis (k), which points towards the superior end.
    pub axes: Matrix3<f64>,
    /// Set when the anterior direction was parallel to the spine and an
    /// arbitrary completion was used instead.
    pub degenerate: bool,
}

pub fn patch_frame(spline: &SpineSpline, target: VertebraLabel) -> Result<PatchFrame, PrepError> {
    let center = spline.control_point(target).ok_or(PrepError::LabelNotFound(target))?;
    // Centroids run superior→inferior, so the vertical axis is the reversed tangent.
    let w = -spline.tangent_at(target).ok_or(PrepError::LabelNotFound(target))?;
    let projected = ANTERIOR - w * ANTERIOR.dot(&w);
    let (v, degenerate) = if projected.norm() < 1e-6 {
        log::warn!("{target}: spine tangent parallel to the anterior axis, using an arbitrary in-plane frame");
        let helper = if w.x.abs() < 0.9 { Vector3::x() } else { Vector3::z() };
        ((helper - w * helper.dot(&w)).normalize(), true)
    } else {
        (projected.normalize(), false)
    };
    let u = v.cross(&w);
    Ok(PatchFrame {
        center,
        axes: Matrix3::from_columns(&[u, v, w]),
        degenerate,
    })
}

/// Resamples a `size³` grid around `target` in the source intensity unit.
///
/// Patch voxel `(i, j, k)` lies at `center + spacing * ((i, j, k) - size/2)` in
/// the patch frame, so voxel `size/2` coincides with the centroid. Samples are
/// trilinear; anything outside the source grid becomes [`OUTSIDE_HU`].
pub fn resample_patch(
    volume: &Volume,
    spline: &SpineSpline,
    target: VertebraLabel,
    size: usize,
    spacing_mm: f64,
) -> Result<(Volume, PatchFrame), PrepError> {
    if size == 0 || !(spacing_mm.is_finite() && spacing_mm > 0.0) {
        return Err(PrepError::InvalidPatchGeometry { size, spacing_mm });
    }
    let frame = patch_frame(spline, target)?;
    let half = (size / 2) as f64;

    // Map patch indices straight to source voxel coordinates:
    // idx(i, j, k) = base + i * step_i + j * step_j + k * step_k.
    let to_source = Matrix3::from_diagonal(&Vector3::from(volume.spacing_mm).map(|s| 1.0 / s))
        * volume.axis_directions.transpose();
    let steps = to_source * frame.axes * spacing_mm;
    let center_idx = to_source * (frame.center.coords - Vector3::from(volume.origin_mm));
    let base = center_idx - steps * Vector3::repeat(half);
    let (si, sj, sk) = (steps.column(0).into_owned(), steps.column(1).into_owned(), steps.column(2).into_owned());

    let mut values = vec![0f32; size * size * size];
    values
        .par_chunks_mut(size * size)
        .enumerate()
        .for_each(|(k, plane)| {
            let plane_base = base + sk * k as f64;
            for j in 0..size {
                let row_base = plane_base + sj * j as f64;
                for i in 0..size {
                    let p = row_base + si * i as f64;
                    plane[i + size * j] = volume
                        .sample_trilinear([p.x, p.y, p.z])
                        .map(|v| v as f32)
                        .unwrap_or(OUTSIDE_HU);
                }
            }
        });

    let origin = frame.center.coords - frame.axes * Vector3::repeat(half * spacing_mm);
    let patch = Volume::new(
        [size; 3],
        values,
        [spacing_mm; 3],
        origin.into(),
        frame.axes,
        volume.intensity_unit,
    )?;
    Ok((patch, frame))
}

/// Resamples and HU-normalises one vertebra patch.
pub fn extract_patch(
    volume: &Volume,
    spline: &SpineSpline,
    target: VertebraLabel,
    size: usize,
    spacing_mm: f64,
) -> Result<PatchVolume, PrepError> {
    let (raw, _) = resample_patch(volume, spline, target, size, spacing_mm)?;
    Ok(PatchVolume {
        volume: normalize_hu(&raw),
        sample_id: target.to_string(),
        vertebra_label: target,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::IntensityUnit;
    use crate::io::VertebraLabel::Thoracic;
    use crate::prep::{build_spline, Centroid, CentroidSet};

    fn spline_z(center: [f64; 3]) -> SpineSpline {
        let c = |n, dz: f64| Centroid {
            label: Thoracic(n),
            position_mm: [center[0], center[1], center[2] + dz],
        };
        build_spline(&CentroidSet::new(vec![c(4, 25.0), c(5, 0.0), c(6, -25.0)]).unwrap()).unwrap()
    }

    #[test]
    fn identity_frame_is_volume_axes() {
        let f = patch_frame(&spline_z([0.0, 0.0, 0.0]), Thoracic(5)).unwrap();
        assert_eq!(f.axes, Matrix3::identity());
        assert!(!f.degenerate);
    }

    #[test]
    fn integer_translation_is_exact() {
        let n = 20;
        let values: Vec<f32> = (0..n * n * n).map(|v| ((v * 37) % 2001) as f32 - 1000.0 + 0.25).collect();
        let vol = Volume::new([n; 3], values, [1.0; 3], [-5.0, 3.0, 100.0], Matrix3::identity(), IntensityUnit::Hu).unwrap();
        let c = [7.0, 11.0, 9.0];
        let world = vol.index_to_world(c);
        let (patch, _) = resample_patch(&vol, &spline_z(world.coords.into()), Thoracic(5), 8, 1.0).unwrap();
        for k in 0..8 {
            for j in 0..8 {
                for i in 0..8 {
                    let src = [i as i64 + 7 - 4, j as i64 + 11 - 4, k as i64 + 9 - 4];
                    let expected = if src.iter().all(|&s| (0..n as i64).contains(&s)) {
                        vol.voxel(src[0] as usize, src[1] as usize, src[2] as usize)
                    } else {
                        OUTSIDE_HU
                    };
                    assert_eq!(patch.voxel(i, j, k).to_bits(), expected.to_bits());
                }
            }
        }
    }

    #[test]
    fn border_fill_is_air() {
        let vol = Volume::identity([4, 4, 4], vec![500.0; 64], IntensityUnit::Hu).unwrap();
        let p = extract_patch(&vol, &spline_z([0.0, 0.0, 0.0]), Thoracic(5), 16, 1.0).unwrap();
        // Voxel 8 is the centroid at source (0,0,0); anything below it on any axis is outside.
        assert_eq!(p.volume.voxel(7, 8, 8), 0.0);
        assert_eq!(p.volume.voxel(8, 8, 8), 0.75);
        assert_eq!(p.volume.voxel(0, 0, 0), 0.0);
    }

    #[test]
    fn vertical_spine_along_anterior_axis_is_degenerate() {
        let c = |n, y: f64| Centroid { label: Thoracic(n), position_mm: [0.0, y, 0.0] };
        let s = build_spline(&CentroidSet::new(vec![c(1, 10.0), c(2, 0.0)]).unwrap()).unwrap();
        let f = patch_frame(&s, Thoracic(1)).unwrap();
        assert!(f.degenerate);
        assert!((f.axes.transpose() * f.axes - Matrix3::identity()).abs().max() < 1e-12);
    }

    #[test]
    fn unknown_label() {
        let vol = Volume::identity([2, 2, 2], vec![0.0; 8], IntensityUnit::Hu).unwrap();
        assert!(matches!(
            extract_patch(&vol, &spline_z([0.0; 3]), Thoracic(9), 4, 1.0),
            Err(PrepError::LabelNotFound(_))
        ));
    }
}
