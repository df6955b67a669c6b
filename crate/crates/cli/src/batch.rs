use std::path::Path;

use anyhow::{bail, Context, Result};
use dissect_core::artifacts::{read_ranking, read_thresholds, thresholds_json, ranking_json, to_json, RelevanceDoc, REPORTS_DIR, BUNDLES_DIR};
use dissect_core::dissect::{
    compute_metrics, correlation_scores, fit_thresholds, relevance_scores, ActivationSource, Estimator, PositivePolicy,
};
use dissect_core::io::{load_manifest, write_file, DatasetIndex, Split};
use dissect_core::report::{export_unit_bundle, inference_report, write_report_overlays, Axis, BundleOptions};

pub fn load(manifest: &Path) -> Result<DatasetIndex> {
    load_manifest(manifest).with_context(|| format!("loading manifest {}", manifest.display()))
}

fn emit(bytes: &[u8], out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => {
            write_file(path, bytes)?;
            log::info!("wrote {}", path.display());
        }
        None => {
            use std::io::Write;
            std::io::stdout().write_all(bytes)?;
        }
    }
    Ok(())
}

pub fn fit(manifest: &Path, q: f64, estimator: Estimator, split: Split, out: &Path) -> Result<()> {
    let dataset = load(manifest)?.restrict_to_split(split);
    if dataset.is_empty() {
        bail!("no samples in split {split}");
    }
    let t = fit_thresholds(&dataset, q, estimator)?;
    log::info!("fitted {} unit thresholds over {} samples ({estimator})", t.units(), dataset.len());
    emit(&thresholds_json(&t), Some(out))
}

pub fn correlate(manifest: &Path, thresholds: &Path, policy: PositivePolicy, out: &Path) -> Result<()> {
    let dataset = load(manifest)?;
    let t = read_thresholds(thresholds)?;
    let r = correlation_scores(&dataset, &t, policy)?;
    log::info!("ranked {} units over {} positive samples", r.units(), r.positive_count);
    emit(&ranking_json(&r), Some(out))
}

pub fn relevance(manifest: &Path, thresholds: &Path, sample: &str, out: Option<&Path>) -> Result<()> {
    let dataset = load(manifest)?;
    let t = read_thresholds(thresholds)?;
    let i = dataset
        .entries
        .iter()
        .position(|e| e.sample_id == sample)
        .with_context(|| format!("unknown sample {sample}"))?;
    let r = relevance_scores(&dataset.load(i)?, &t)?;
    emit(&to_json(&RelevanceDoc::from(&r)), out)
}

pub fn metrics(manifest: &Path, threshold: f64, out: Option<&Path>) -> Result<()> {
    let m = compute_metrics(&load(manifest)?, threshold)?;
    emit(&to_json(&m), out)
}

#[allow(clippy::too_many_arguments)]
pub fn report(
    manifest: &Path,
    thresholds: &Path,
    ranking: &Path,
    sample: &str,
    top: usize,
    axis: Axis,
    out_dir: &Path,
    overlays: bool,
) -> Result<()> {
    let dataset = load(manifest)?;
    let t = read_thresholds(thresholds)?;
    let r = read_ranking(ranking)?;
    let report = inference_report(sample, &dataset, &t, &r, top, axis)?;
    if overlays {
        write_report_overlays(&report, &dataset, &t, out_dir)?;
    }
    emit(&to_json(&report), Some(&out_dir.join(REPORTS_DIR).join(format!("{sample}.json"))))
}

pub fn bundle_options(top_samples: usize, full_exports: usize, axis: Axis, alpha: f64) -> BundleOptions {
    let side = (top_samples as f64).sqrt().ceil() as usize;
    let rows = top_samples.div_ceil(side.max(1));
    BundleOptions {
        top_samples,
        full_exports,
        grid: (rows.max(1), side.max(1)),
        axis,
        alpha,
    }
}

pub fn bundle(manifest: &Path, thresholds: &Path, ranking: Option<&Path>, unit: usize, opts: &BundleOptions, out_dir: &Path) -> Result<()> {
    let dataset = load(manifest)?;
    let t = read_thresholds(thresholds)?;
    let r = ranking.map(read_ranking).transpose()?;
    let root = out_dir.join(BUNDLES_DIR);
    let b = export_unit_bundle(unit, &dataset, &t, r.as_ref(), &root, opts)?;
    if b.no_significant_activations {
        log::warn!("unit {unit}: no statistically significant activations on fractured samples");
    }
    log::info!("wrote {}", root.join(&b.collage).display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundle_grid_fits_the_requested_samples() {
        for n in [1, 2, 5, 10, 25, 26] {
            let g = bundle_options(n, 0, Axis::Sagittal, 0.5).grid;
            assert!(g.0 * g.1 >= n, "{n}: {g:?}");
            assert!(g.0 <= g.1);
        }
        assert_eq!(bundle_options(25, 5, Axis::Sagittal, 0.5).grid, (5, 5));
    }
}
