use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Subcommand};
use dissect_client::{Client, Route, UnitOrder};
use dissect_core::io::Split;
use dissect_core::report::{Axis, DEFAULT_TOP_SAMPLES, DEFAULT_TOP_UNITS};
use dissect_server::{build_index, ServeConfig, ARTIFACTS_ENV};

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Artifact directory; the DISSECT_ARTIFACTS environment variable takes precedence.
    #[arg(long)]
    artifacts: Option<PathBuf>,
    /// Manifest; defaults to `manifest.jsonl` in the artifact directory.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Built UI assets served under `/`.
    #[arg(long)]
    ui_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long, default_value = "http://127.0.0.1:8080")]
    url: String,
    /// Write the body here instead of stdout (required for PNG routes).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    route: QueryRoute,
}

#[derive(Debug, Subcommand)]
enum QueryRoute {
    /// Units with correlation scores.
    Units {
        #[arg(long, default_value = "correlation", value_parser = ["correlation", "unit"])]
        sort: String,
        #[arg(long, default_value_t = 0)]
        offset: usize,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// One unit, with its bundle when exported.
    Unit {
        k: usize,
    },
    /// Samples that activate a unit most.
    TopSamples {
        k: usize,
        #[arg(long, default_value_t = DEFAULT_TOP_SAMPLES)]
        n: usize,
        /// Include non-fractured samples.
        #[arg(long)]
        all: bool,
    },
    /// Manifest entries.
    Samples {
        #[arg(long, default_value = "all")]
        split: Split,
        #[arg(long, default_value_t = 0)]
        offset: usize,
        #[arg(long)]
        limit: Option<usize>,
    },
    /// One manifest entry.
    Sample {
        id: String,
    },
    /// Inference report of one sample.
    Relevance {
        id: String,
        #[arg(long, default_value_t = DEFAULT_TOP_UNITS)]
        top: usize,
        #[arg(long, default_value = "sagittal")]
        axis: Axis,
    },
    /// Heatmap overlay PNG.
    Overlay {
        id: String,
        unit: usize,
        axis: Axis,
        slice: usize,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Patch slice PNG.
    Patch {
        id: String,
        axis: Axis,
        slice: usize,
    },
}

impl QueryRoute {
    fn into_route(self) -> Route {
        match self {
            QueryRoute::Units { sort, offset, limit } => Route::Units {
                order: if sort == "unit" { UnitOrder::Unit } else { UnitOrder::Correlation },
                offset,
                limit,
            },
            QueryRoute::Unit { k } => Route::Unit(k),
            QueryRoute::TopSamples { k, n, all } => Route::TopSamples {
                unit: k,
                n,
                fractured_only: !all,
            },
            QueryRoute::Samples { split, offset, limit } => Route::Samples { offset, limit, split },
            QueryRoute::Sample { id } => Route::Sample(id),
            QueryRoute::Relevance { id, top, axis } => Route::Relevance { sample_id: id, top, axis },
            QueryRoute::Overlay { id, unit, axis, slice, alpha } => Route::Overlay {
                sample_id: id,
                unit,
                axis,
                slice,
                alpha,
            },
            QueryRoute::Patch { id, axis, slice } => Route::Patch { sample_id: id, axis, slice },
        }
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

pub fn serve(args: ServeArgs) -> Result<()> {
    let Some(artifacts) = args.artifacts.or_else(|| std::env::var_os(ARTIFACTS_ENV).map(PathBuf::from)) else {
        bail!("no artifact directory: pass --artifacts or set {ARTIFACTS_ENV}");
    };
    let config = ServeConfig {
        artifacts,
        manifest: args.manifest,
        ui_dir: args.ui_dir,
    }
    .with_env_override();
    let index = build_index(&config).with_context(|| format!("loading artifacts from {}", config.artifacts.display()))?;
    runtime()?.block_on(async move {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port))
            .await
            .with_context(|| format!("binding {}:{}", args.host, args.port))?;
        dissect_server::serve(index, listener).await?;
        Ok(())
    })
}

pub fn query(args: QueryArgs) -> Result<()> {
    let client = Client::new(&args.url)?;
    let png = matches!(args.route, QueryRoute::Overlay { .. } | QueryRoute::Patch { .. });
    if png && args.out.is_none() {
        bail!("PNG routes need --out");
    }
    let route = args.route.into_route();
    let body = runtime()?.block_on(client.fetch(&route))?;
    match &args.out {
        Some(path) => dissect_core::io::write_file(path, &body)?,
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&body)?;
        }
    }
    Ok(())
}
