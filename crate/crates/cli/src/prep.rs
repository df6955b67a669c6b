use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use dissect_core::io::{read_nifti, write_file, write_nifti_file, write_tensor_file, DatasetIndex, SampleEntry, Split, Volume};
use dissect_core::prep::{build_spline, extract_patch, load_centroids};
use dissect_core::synth::{generate, PlantSpec};

pub struct ExtractOptions {
    pub volume: PathBuf,
    pub centroids: PathBuf,
    pub out_dir: PathBuf,
    pub include_cervical: bool,
    pub nifti: bool,
    pub size: usize,
    pub spacing: f64,
    pub sample_prefix: Option<String>,
}

/// Reads `.nii` or gzip-compressed `.nii.gz`.
pub fn read_volume(path: &Path) -> Result<Volume> {
    let raw = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let bytes = if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        flate2::read::GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .with_context(|| format!("decompressing {}", path.display()))?;
        out
    } else {
        raw
    };
    read_nifti(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn volume_stem(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.trim_end_matches(".gz").trim_end_matches(".nii").to_string()
}

pub fn extract(o: &ExtractOptions) -> Result<()> {
    let ct = read_volume(&o.volume)?;
    let centroids = load_centroids(&o.centroids)?;
    let spline = build_spline(&centroids)?;
    let prefix = o.sample_prefix.clone().unwrap_or_else(|| volume_stem(&o.volume));

    let mut entries = Vec::new();
    for c in centroids.items() {
        if c.label.is_cervical() && !o.include_cervical {
            log::info!("skipping cervical vertebra {}", c.label);
            continue;
        }
        let patch = extract_patch(&ct, &spline, c.label, o.size, o.spacing)?;
        let id = format!("{prefix}_{}", c.label);
        let patch_path = format!("patches/{id}.npy");
        write_tensor_file(&o.out_dir.join(&patch_path), patch.volume.tensor())?;
        if o.nifti {
            write_nifti_file(&o.out_dir.join(format!("patches/{id}.nii")), &patch.volume)?;
        }
        entries.push(SampleEntry {
            sample_id: id.clone(),
            vertebra_label: c.label,
            fractured: false,
            predicted_prob: None,
            activation_path: format!("activations/{id}.npy"),
            patch_path: Some(patch_path),
            split: Split::Train,
        });
    }
    let index = DatasetIndex::new(entries, &o.out_dir);
    let manifest = o.out_dir.join("manifest.jsonl");
    write_file(&manifest, index.to_jsonl().as_bytes())?;
    log::info!("wrote {} patches and {}", index.len(), manifest.display());
    Ok(())
}

pub fn synth_generate(spec: &Path, out_dir: &Path) -> Result<()> {
    let text = std::fs::read_to_string(spec).with_context(|| format!("reading {}", spec.display()))?;
    let spec: PlantSpec = serde_json::from_str(&text).with_context(|| format!("parsing {}", spec.display()))?;
    let (dataset, truth) = generate(&spec, out_dir)?;
    log::info!(
        "generated {} samples with {} planted units in {}",
        dataset.len(),
        truth.units.len(),
        out_dir.display()
    );
    Ok(())
}
