//! Network dissection for volumetric fracture classifiers.
//!
//! The crate is split along the processing pipeline:
//!
//! * [`io`]: NPY v1.0 tensors, NIfTI-1 volumes and the JSON-Lines manifest.
//! * [`prep`]: spline-aligned, 1 mm, 96³ vertebra patches with HU windowing.
//! * [`dissect`]: per-unit top-quantile thresholds, masks, enabled-unit sets,
//!   positive-sample correlation, inference relevance and classification metrics.
//! * [`report`]: slice selection, heatmap overlays, collages, unit bundles and
//!   single-inference reports.
//! * [`synth`]: seeded synthetic datasets with planted concepts, plus a naive
//!   reference implementation used as a test oracle.
//! * [`artifacts`]: the JSON documents shared by the CLI and the HTTP service.

pub mod artifacts;
pub mod dissect;
pub mod io;
pub mod prep;
pub mod report;
pub mod synth;

mod error;

pub use error::{Error, Result};
