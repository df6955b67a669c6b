use std::path::Path;

use super::DissectError;
use crate::io::{read_tensor_file, DatasetIndex, SampleEntry, Tensor};
use crate::Result;

/// Final-layer activations of one sample, stored channel-first as
/// `(K, D, H, W)` with `W` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationVolume {
    pub sample_id: String,
    units: usize,
    spatial: [usize; 3],
    data: Vec<f32>,
}

impl ActivationVolume {
    pub fn new(sample_id: impl Into<String>, units: usize, spatial: [usize; 3], data: Vec<f32>) -> Result<Self, DissectError> {
        let sample_id = sample_id.into();
        let voxels: usize = spatial.iter().product();
        if units == 0 || voxels == 0 || units.checked_mul(voxels) != Some(data.len()) {
            return Err(DissectError::InvalidActivation {
                sample_id,
                reason: format!("{} values do not fill {units} units of {spatial:?}", data.len()),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(DissectError::InvalidActivation {
                sample_id,
                reason: format!("non-finite activation for unit {} at voxel {}", pos / voxels, pos % voxels),
            });
        }
        Ok(Self {
            sample_id,
            units,
            spatial,
            data,
        })
    }

    /// Accepts `(K, D, H, W)` tensors, or `(K, H, W)` maps which are treated
    /// as a single-slice volume.
    pub fn from_tensor(sample_id: impl Into<String>, tensor: Tensor) -> Result<Self, DissectError> {
        let sample_id = sample_id.into();
        let (shape, data) = tensor.into_parts();
        let (units, spatial) = match shape[..] {
            [k, d, h, w] => (k, [d, h, w]),
            [k, h, w] => (k, [1, h, w]),
            _ => {
                return Err(DissectError::InvalidActivation {
                    sample_id,
                    reason: format!("expected a (K, D, H, W) tensor, got shape {shape:?}"),
                })
            }
        };
        Self::new(sample_id, units, spatial, data.into_f32())
    }

    pub fn load(sample_id: &str, path: &Path) -> Result<Self> {
        let tensor = read_tensor_file(path)?;
        Ok(Self::from_tensor(sample_id, tensor)?)
    }

    pub fn to_tensor(&self) -> Tensor {
        let [d, h, w] = self.spatial;
        Tensor::from_f32(vec![self.units, d, h, w], self.data.clone()).expect("shape matches data")
    }

    pub fn units(&self) -> usize {
        self.units
    }

    /// `[D, H, W]`.
    pub fn spatial(&self) -> [usize; 3] {
        self.spatial
    }

    pub fn voxels(&self) -> usize {
        self.spatial.iter().product()
    }

    pub fn unit(&self, k: usize) -> &[f32] {
        let n = self.voxels();
        &self.data[k * n..(k + 1) * n]
    }

    pub fn unit_mut(&mut self, k: usize) -> &mut [f32] {
        let n = self.voxels();
        &mut self.data[k * n..(k + 1) * n]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Flat voxel offset of `(d, h, w)` within a unit map.
    pub fn offset(&self, d: usize, h: usize, w: usize) -> usize {
        let [_, hh, ww] = self.spatial;
        (d * hh + h) * ww + w
    }
}

/// An indexed collection of activation volumes that can be loaded on demand.
pub trait ActivationSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn load(&self, i: usize) -> Result<ActivationVolume>;
}

impl ActivationSource for DatasetIndex {
    fn len(&self) -> usize {
        self.entries.len()
    }

    fn load(&self, i: usize) -> Result<ActivationVolume> {
        let e = &self.entries[i];
        ActivationVolume::load(&e.sample_id, &self.activation_file(e))
    }
}

impl ActivationSource for [ActivationVolume] {
    fn len(&self) -> usize {
        <[ActivationVolume]>::len(self)
    }

    fn load(&self, i: usize) -> Result<ActivationVolume> {
        Ok(self[i].clone())
    }
}

impl ActivationSource for Vec<ActivationVolume> {
    fn len(&self) -> usize {
        self.as_slice().len()
    }

    fn load(&self, i: usize) -> Result<ActivationVolume> {
        Ok(self[i].clone())
    }
}

pub fn load_activation(dataset: &DatasetIndex, entry: &SampleEntry) -> Result<ActivationVolume> {
    ActivationVolume::load(&entry.sample_id, &dataset.activation_file(entry))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_is_channel_first() {
        let data: Vec<f32> = (0..2 * 2 * 3 * 4).map(|v| v as f32).collect();
        let a = ActivationVolume::new("s", 2, [2, 3, 4], data).unwrap();
        assert_eq!(a.unit(1)[0], 24.0);
        assert_eq!(a.unit(0)[a.offset(1, 2, 3)], 23.0);
        assert_eq!(ActivationVolume::from_tensor("s", a.to_tensor()).unwrap(), a);
    }

    #[test]
    fn rejects_non_finite_and_bad_shapes() {
        assert!(ActivationVolume::new("s", 1, [1, 1, 2], vec![0.0, f32::NAN]).is_err());
        assert!(ActivationVolume::new("s", 1, [1, 1, 2], vec![0.0]).is_err());
        assert!(ActivationVolume::new("s", 0, [1, 1, 1], vec![]).is_err());
        let t = Tensor::from_f32(vec![4], vec![0.0; 4]).unwrap();
        assert!(ActivationVolume::from_tensor("s", t).is_err());
    }

    #[test]
    fn two_dimensional_maps_become_single_slices() {
        let t = Tensor::from_f32(vec![3, 2, 2], vec![1.0; 12]).unwrap();
        let a = ActivationVolume::from_tensor("s", t).unwrap();
        assert_eq!(a.spatial(), [1, 2, 2]);
        assert_eq!(a.units(), 3);
    }
}
