//! `dissect`: batch dissection passes, report export, the HTTP service and a
//! client for it.

mod batch;
mod net;
mod prep;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use dissect_core::dissect::{Estimator, PositivePolicy, DEFAULT_DECISION_THRESHOLD, DEFAULT_QUANTILE};
use dissect_core::io::Split;
use dissect_core::prep::{DEFAULT_PATCH_SIZE, DEFAULT_PATCH_SPACING_MM};
use dissect_core::report::{Axis, DEFAULT_ALPHA, DEFAULT_TOP_SAMPLES, DEFAULT_TOP_UNITS};

#[derive(Debug, Parser)]
#[command(name = "dissect", version, about = "Network dissection for volumetric fracture classifiers")]
struct Cli {
    /// Worker threads for data-parallel passes (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct ManifestArg {
    /// JSON-Lines sample manifest.
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit per-unit top-quantile thresholds.
    Fit {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long, default_value_t = DEFAULT_QUANTILE)]
        q: f64,
        #[arg(long, default_value = "exact")]
        estimator: Estimator,
        /// Restrict fitting to one split.
        #[arg(long, default_value = "all")]
        split: Split,
        #[arg(long, default_value = "thresholds.json")]
        out: PathBuf,
    },
    /// Rank units by how often they fire on positive samples.
    Correlate {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long, default_value = "thresholds.json")]
        thresholds: PathBuf,
        #[arg(long, default_value = "gt-positive")]
        policy: PositivePolicy,
        #[arg(long, default_value = "ranking.json")]
        out: PathBuf,
    },
    /// Per-unit relevance scores of one sample.
    Relevance {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long, default_value = "thresholds.json")]
        thresholds: PathBuf,
        #[arg(long)]
        sample: String,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// F1, accuracy, AUC and average precision of the manifest predictions.
    Metrics {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long, default_value_t = DEFAULT_DECISION_THRESHOLD)]
        threshold: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Single-inference report with overlays.
    Report {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long, default_value = "thresholds.json")]
        thresholds: PathBuf,
        #[arg(long, default_value = "ranking.json")]
        ranking: PathBuf,
        #[arg(long)]
        sample: String,
        #[arg(long, default_value_t = DEFAULT_TOP_UNITS)]
        top: usize,
        #[arg(long, default_value = "sagittal")]
        axis: Axis,
        /// Root for `reports/{sample}.json` and the overlay tree.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        #[arg(long)]
        no_overlays: bool,
    },
    /// Collage, slice stacks and activation volumes for one unit.
    Bundle {
        #[command(flatten)]
        manifest: ManifestArg,
        #[arg(long, default_value = "thresholds.json")]
        thresholds: PathBuf,
        /// Adds correlation rank and score to the bundle when given.
        #[arg(long)]
        ranking: Option<PathBuf>,
        #[arg(long)]
        unit: usize,
        #[arg(long, default_value_t = DEFAULT_TOP_SAMPLES)]
        top_samples: usize,
        #[arg(long, default_value_t = 5)]
        full_exports: usize,
        #[arg(long, default_value = "sagittal")]
        axis: Axis,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        /// Root for `bundles/unit_{k}`.
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Serve an artifact directory over HTTP.
    Serve(net::ServeArgs),
    /// Query a running service and print the response body.
    Query(net::QueryArgs),
    /// Vertebra patch preparation.
    #[command(subcommand)]
    Prep(PrepCommand),
    /// Synthetic datasets with planted concepts.
    #[command(subcommand)]
    Synth(SynthCommand),
}

#[derive(Debug, Subcommand)]
enum PrepCommand {
    /// Extract one spline-aligned patch per vertebra from a CT volume.
    Extract {
        /// CT volume in HU, `.nii` or `.nii.gz`.
        #[arg(long)]
        volume: PathBuf,
        #[arg(long)]
        centroids: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        include_cervical: bool,
        /// Also write each patch as NIfTI.
        #[arg(long)]
        nifti: bool,
        #[arg(long, default_value_t = DEFAULT_PATCH_SIZE)]
        size: usize,
        #[arg(long, default_value_t = DEFAULT_PATCH_SPACING_MM)]
        spacing: f64,
        /// Prefix for sample ids; defaults to the volume file stem.
        #[arg(long)]
        sample_prefix: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
enum SynthCommand {
    /// Write manifest, activations, patches and ground truth for a spec.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        anyhow::ensure!(n > 0, "--threads must be positive");
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match cli.command {
        Command::Fit {
            manifest,
            q,
            estimator,
            split,
            out,
        } => batch::fit(&manifest.manifest, q, estimator, split, &out),
        Command::Correlate {
            manifest,
            thresholds,
            policy,
            out,
        } => batch::correlate(&manifest.manifest, &thresholds, policy, &out),
        Command::Relevance {
            manifest,
            thresholds,
            sample,
            out,
        } => batch::relevance(&manifest.manifest, &thresholds, &sample, out.as_deref()),
        Command::Metrics { manifest, threshold, out } => batch::metrics(&manifest.manifest, threshold, out.as_deref()),
        Command::Report {
            manifest,
            thresholds,
            ranking,
            sample,
            top,
            axis,
            out_dir,
            no_overlays,
        } => batch::report(&manifest.manifest, &thresholds, &ranking, &sample, top, axis, &out_dir, !no_overlays),
        Command::Bundle {
            manifest,
            thresholds,
            ranking,
            unit,
            top_samples,
            full_exports,
            axis,
            alpha,
            out_dir,
        } => {
            let opts = batch::bundle_options(top_samples, full_exports, axis, alpha);
            batch::bundle(&manifest.manifest, &thresholds, ranking.as_deref(), unit, &opts, &out_dir)
        }
        Command::Serve(args) => net::serve(args),
        Command::Query(args) => net::query(args),
        Command::Prep(PrepCommand::Extract {
            volume,
            centroids,
            out_dir,
            include_cervical,
            nifti,
            size,
            spacing,
            sample_prefix,
        }) => prep::extract(&prep::ExtractOptions {
            volume,
            centroids,
            out_dir,
            include_cervical,
            nifti,
            size,
            spacing,
            sample_prefix,
        }),
        Command::Synth(SynthCommand::Generate { spec, out_dir }) => prep::synth_generate(&spec, &out_dir),
    }
}
