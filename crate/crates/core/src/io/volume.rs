use nalgebra::{Matrix3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::npy::{Tensor, TensorData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum IntensityUnit {
    /// Hounsfield units.
    #[serde(rename = "HU")]
    Hu,
    Normalized,
    Raw,
}

impl IntensityUnit {
    pub fn as_str(self) -> &'static str {
        match self {
            IntensityUnit::Hu => "HU",
            IntensityUnit::Normalized => "normalized",
            IntensityUnit::Raw => "raw",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "HU" => Some(IntensityUnit::Hu),
            "normalized" => Some(IntensityUnit::Normalized),
            "raw" => Some(IntensityUnit::Raw),
            _ => None,
        }
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum VolumeError {
    #[error(transparent)]
    Tensor(#[from] super::npy::TensorError),
    #[error("volume tensor must be 3D, got shape {0:?}")]
    NotThreeDimensional(Vec<usize>),
    #[error("spacing must be strictly positive and finite, got {0:?}")]
    BadSpacing([f64; 3]),
    #[error("axis directions are not orthonormal (max deviation {0:.3e})")]
    NotOrthonormal(f64),
}

/// A 3D scalar grid with world geometry.
///
/// Voxel `(i, j, k)` sits at `origin + directions * diag(spacing) * (i, j, k)`.
/// The backing tensor has shape `[nk, nj, ni]`, so `i` is the fastest-varying
/// index, matching NIfTI's on-disk order.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    tensor: Tensor,
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
    /// Columns are the world directions of the i, j and k axes.
    pub axis_directions: Matrix3<f64>,
    pub intensity_unit: IntensityUnit,
}

const ORTHONORMAL_TOL: f64 = 1e-6;

impl Volume {
    /// `dims` is `(ni, nj, nk)`; `values` are laid out with `i` fastest.
    pub fn new(
        dims: [usize; 3],
        values: Vec<f32>,
        spacing_mm: [f64; 3],
        origin_mm: [f64; 3],
        axis_directions: Matrix3<f64>,
        intensity_unit: IntensityUnit,
    ) -> Result<Self, VolumeError> {
        let tensor = Tensor::from_f32(vec![dims[2], dims[1], dims[0]], values)?;
        Self::from_tensor(tensor, spacing_mm, origin_mm, axis_directions, intensity_unit)
    }

    pub fn from_tensor(
        tensor: Tensor,
        spacing_mm: [f64; 3],
        origin_mm: [f64; 3],
        axis_directions: Matrix3<f64>,
        intensity_unit: IntensityUnit,
    ) -> Result<Self, VolumeError> {
        if tensor.shape().len() != 3 {
            return Err(VolumeError::NotThreeDimensional(tensor.shape().to_vec()));
        }
        if spacing_mm.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(VolumeError::BadSpacing(spacing_mm));
        }
        let deviation = orthonormal_deviation(&axis_directions);
        if deviation > ORTHONORMAL_TOL {
            return Err(VolumeError::NotOrthonormal(deviation));
        }
        let tensor = match tensor.data() {
            TensorData::Float32(_) => tensor,
            _ => {
                let (shape, data) = tensor.into_parts();
                Tensor::from_f32(shape, data.into_f32())?
            }
        };
        Ok(Self {
            tensor,
            spacing_mm,
            origin_mm,
            axis_directions,
            intensity_unit,
        })
    }

    /// Unit-spaced, axis-aligned volume at the world origin.
    pub fn identity(dims: [usize; 3], values: Vec<f32>, unit: IntensityUnit) -> Result<Self, VolumeError> {
        Self::new(dims, values, [1.0; 3], [0.0; 3], Matrix3::identity(), unit)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.tensor
    }

    /// `(ni, nj, nk)`.
    pub fn dims(&self) -> [usize; 3] {
        let s = self.tensor.shape();
        [s[2], s[1], s[0]]
    }

    pub fn values(&self) -> &[f32] {
        match self.tensor.data() {
            TensorData::Float32(v) => v,
            _ => unreachable!("volume tensors are float32"),
        }
    }

    pub fn linear_index(&self, i: usize, j: usize, k: usize) -> usize {
        let [ni, nj, _] = self.dims();
        i + ni * (j + nj * k)
    }

    pub fn voxel(&self, i: usize, j: usize, k: usize) -> f32 {
        self.values()[self.linear_index(i, j, k)]
    }

    /// Index-to-world linear part, `directions * diag(spacing)`.
    pub fn linear_map(&self) -> Matrix3<f64> {
        self.axis_directions * Matrix3::from_diagonal(&Vector3::from(self.spacing_mm))
    }

    pub fn index_to_world(&self, idx: [f64; 3]) -> Point3<f64> {
        Point3::from(self.linear_map() * Vector3::from(idx) + Vector3::from(self.origin_mm))
    }

    /// Continuous voxel coordinates of a world point.
    pub fn world_to_index(&self, p: &Point3<f64>) -> [f64; 3] {
        let rel = p.coords - Vector3::from(self.origin_mm);
        let rotated = self.axis_directions.transpose() * rel;
        [
            rotated.x / self.spacing_mm[0],
            rotated.y / self.spacing_mm[1],
            rotated.z / self.spacing_mm[2],
        ]
    }

    /// Trilinear interpolation at continuous voxel coordinates, or `None` when
    /// the point lies outside the sampled grid.
    pub fn sample_trilinear(&self, idx: [f64; 3]) -> Option<f64> {
        let dims = self.dims();
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        for ax in 0..3 {
            let x = idx[ax];
            let upper = (dims[ax] - 1) as f64;
            if !(x >= 0.0 && x <= upper) {
                return None;
            }
            let f = x.floor();
            base[ax] = f as usize;
            frac[ax] = x - f;
        }
        let v = self.values();
        let next = |ax: usize| if base[ax] + 1 < dims[ax] { base[ax] + 1 } else { base[ax] };
        let (i0, j0, k0) = (base[0], base[1], base[2]);
        let (i1, j1, k1) = (next(0), next(1), next(2));
        let at = |i, j, k| v[self.linear_index(i, j, k)] as f64;
        let lerp = |a: f64, b: f64, t: f64| if t == 0.0 { a } else { a * (1.0 - t) + b * t };
        let c00 = lerp(at(i0, j0, k0), at(i1, j0, k0), frac[0]);
        let c10 = lerp(at(i0, j1, k0), at(i1, j1, k0), frac[0]);
        let c01 = lerp(at(i0, j0, k1), at(i1, j0, k1), frac[0]);
        let c11 = lerp(at(i0, j1, k1), at(i1, j1, k1), frac[0]);
        let c0 = lerp(c00, c10, frac[1]);
        let c1 = lerp(c01, c11, frac[1]);
        Some(lerp(c0, c1, frac[2]))
    }
}

pub(crate) fn orthonormal_deviation(m: &Matrix3<f64>) -> f64 {
    (m.transpose() * m - Matrix3::identity()).abs().max()
}
