use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::artifacts::ArtifactError;
use crate::dissect::DissectError;
use crate::io::{ManifestError, NiftiError, TensorError, VolumeError};
use crate::prep::PrepError;
use crate::report::ReportError;
use crate::synth::SynthError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Tensor {
        path: PathBuf,
        #[source]
        source: TensorError,
    },
    #[error("{path}: {source}")]
    Nifti {
        path: PathBuf,
        #[source]
        source: NiftiError,
    },
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Prep(#[from] PrepError),
    #[error(transparent)]
    Dissect(#[from] DissectError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn json(path: &Path, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.to_path_buf(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
