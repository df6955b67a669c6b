//! Readers and writers for the on-disk formats: NPY v1.0 tensors, NIfTI-1
//! volumes and the JSON-Lines manifest.

pub mod manifest;
pub mod nifti;
pub mod npy;
mod volume;

use std::path::Path;

pub use manifest::{load_manifest, parse_manifest, DatasetIndex, ManifestError, SampleEntry, Split, VertebraLabel};
pub use nifti::{read_nifti, write_nifti, NiftiError};
pub use npy::{read_tensor, write_tensor, ElementType, Tensor, TensorData, TensorError};
pub use volume::{IntensityUnit, Volume, VolumeError};

use crate::{Error, Result};

pub fn read_tensor_file(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_tensor(&bytes).map_err(|e| Error::Tensor {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Header of an NPY file, reading at most the first 64 KiB.
pub fn read_tensor_header_file(path: &Path) -> Result<npy::Header> {
    use std::io::Read;
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(4096);
    file.take(10 + u16::MAX as u64)
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    npy::read_header(&buf).map_err(|e| Error::Tensor {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn write_tensor_file(path: &Path, t: &Tensor) -> Result<()> {
    write_file(path, &write_tensor(t))
}

pub fn read_nifti_file(path: &Path) -> Result<Volume> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    read_nifti(&bytes).map_err(|e| Error::Nifti {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn write_nifti_file(path: &Path, v: &Volume) -> Result<()> {
    write_file(path, &write_nifti(v))
}

/// Writes `bytes`, creating parent directories as needed.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
