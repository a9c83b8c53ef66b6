//! `greenview` command-line interface.
//!
//! [`run`] parses arguments, executes one subcommand and returns the process
//! exit code: 0 on success, 2 on usage errors, 1 on runtime failures.

use std::ffi::OsString;
use std::fmt;
use std::io::Write;
use std::path::PathBuf;
use std::sync::atomic::AtomicBool;

use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use greenview::dataset::Split;
use greenview::{Connectivity, ModelKind};

pub mod bench;
pub mod commands;
pub mod config;
pub mod output;

use config::{BackendConfig, PipelineConfig};

/// Raised by the interrupt handler installed in `main`.
pub static INTERRUPTED: AtomicBool = AtomicBool::new(false);

/// Bad invocation detected after argument parsing (exit code 2).
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug)]
pub struct Cancelled;

impl fmt::Display for Cancelled {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("interrupted; partial outputs removed")
    }
}

impl std::error::Error for Cancelled {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "greenview", version, about = "Green View Index estimation and evaluation")]
pub struct Cli {
    /// TOML pipeline configuration; flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Repeat for more detail (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BackendChoice {
    Baseline,
    MaskDir,
    Model,
}

#[derive(Debug, Clone, Args, Default)]
pub struct BackendArgs {
    /// Estimator to run; inferred from --mask-dir / --model when omitted.
    #[arg(long, value_enum)]
    pub backend: Option<BackendChoice>,
    /// Directory of precomputed `<id>.png` masks.
    #[arg(long, value_name = "DIR")]
    pub mask_dir: Option<PathBuf>,
    /// ONNX model file.
    #[arg(long, value_name = "FILE")]
    pub model: Option<PathBuf>,
    /// segmentation or regression
    #[arg(long)]
    pub model_kind: Option<ModelKind>,
    #[arg(long)]
    pub green_dominance_margin: Option<u8>,
    #[arg(long, allow_hyphen_values = true)]
    pub excess_green_threshold: Option<i32>,
    #[arg(long)]
    pub min_cluster_area: Option<usize>,
    /// 4 or 8
    #[arg(long, value_parser = parse_connectivity)]
    pub connectivity: Option<Connectivity>,
}

fn parse_connectivity(s: &str) -> Result<Connectivity, String> {
    match s {
        "4" => Ok(Connectivity::Four),
        "8" => Ok(Connectivity::Eight),
        other => Err(format!("connectivity must be 4 or 8, got {other}")),
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write one vegetation mask PNG per manifest entry.
    Segment {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Per-image GVI CSV plus per-point and per-city companions.
    Gvi {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
        /// Aggregate by summed pixel counts instead of averaging percentages.
        #[arg(long)]
        pool_pixels: bool,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Score an estimator against the manifest's manual labels.
    Evaluate {
        #[arg(long)]
        manifest: PathBuf,
        /// JSON report path.
        #[arg(long, value_name = "JSON")]
        out: PathBuf,
        /// Text table path; defaults to the report path with a .txt extension.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Only evaluate entries of this split.
        #[arg(long)]
        split: Option<Split>,
        /// Pool intersections and unions over the whole set.
        #[arg(long)]
        pooled_iou: bool,
        /// Record running time (makes the report machine-dependent).
        #[arg(long)]
        with_timing: bool,
        /// Row label in the table.
        #[arg(long)]
        name: Option<String>,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Turn Cityscapes labelIds rasters into binary vegetation masks.
    ConvertCityscapes {
        #[arg(long, value_name = "DIR")]
        labels: PathBuf,
        #[arg(long, value_name = "DIR")]
        images: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Manifest path; defaults to `<out>/manifest.csv`.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        vegetation_id: Option<u8>,
    },
    /// Assign train/val/test splits.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// train,val,test counts
        #[arg(long, value_delimiter = ',', required = true)]
        sizes: Vec<usize>,
        #[arg(long)]
        no_stratify: bool,
    },
    /// Place sample points along a GeoJSON street network.
    SamplePoints {
        #[arg(long, value_name = "GEOJSON")]
        network: PathBuf,
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
        /// Meters between points.
        #[arg(long, default_value_t = 50.0)]
        interval: f64,
        /// Keep a random subset of this many points.
        #[arg(long)]
        subsample: Option<usize>,
        /// Comma-separated camera headings in degrees.
        #[arg(long, value_delimiter = ',')]
        headings: Option<Vec<f64>>,
        /// Along-street jitter in meters.
        #[arg(long, default_value_t = 0.0)]
        jitter: f64,
    },
    /// Download street-level imagery for sampled points.
    FetchImagery {
        #[arg(long, value_name = "CSV")]
        points: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long)]
        endpoint: Option<String>,
        /// City recorded in the manifest.
        #[arg(long, default_value = "unknown")]
        city: String,
    },
    /// Measure throughput and extrapolate to 10,000 and 1,000,000 images.
    Benchmark {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 3)]
        repeats: usize,
        /// JSON report path.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        backend: BackendArgs,
    },
    /// Convert a per-point GVI CSV into a GeoJSON FeatureCollection.
    ExportGeojson {
        #[arg(long, value_name = "CSV")]
        points: PathBuf,
        #[arg(long, value_name = "GEOJSON")]
        out: PathBuf,
    },
    /// Generate a synthetic labelled street-scene dataset.
    Synthesize {
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 96)]
        width: u32,
        #[arg(long, default_value_t = 64)]
        height: u32,
        #[arg(long, value_delimiter = ',', default_value = "alpha,beta")]
        cities: Vec<String>,
    },
}

impl BackendArgs {
    /// Applies the flags on top of `cfg`.
    pub fn apply(&self, cfg: &mut PipelineConfig) -> anyhow::Result<()> {
        let b = &mut cfg.baseline;
        if let Some(v) = self.green_dominance_margin {
            b.green_dominance_margin = v;
        }
        if let Some(v) = self.excess_green_threshold {
            b.excess_green_threshold = v;
        }
        if let Some(v) = self.min_cluster_area {
            b.min_cluster_area = v;
        }
        if let Some(v) = self.connectivity {
            b.connectivity = v;
        }

        let choice = self.backend.or(if self.mask_dir.is_some() {
            Some(BackendChoice::MaskDir)
        } else if self.model.is_some() {
            Some(BackendChoice::Model)
        } else {
            None
        });
        let config_kind = match &cfg.backend {
            BackendConfig::Model { kind, .. } => Some(*kind),
            _ => None,
        };
        match choice {
            None if self.model_kind.is_some() => match &mut cfg.backend {
                BackendConfig::Model { kind, .. } => *kind = self.model_kind.unwrap(),
                _ => return Err(usage("--model-kind needs a model backend")),
            },
            None => {}
            Some(BackendChoice::Baseline) => {
                if self.mask_dir.is_some() || self.model.is_some() {
                    return Err(usage("--backend baseline takes no --mask-dir or --model"));
                }
                cfg.backend = BackendConfig::Baseline;
            }
            Some(BackendChoice::MaskDir) => {
                let path = match (&self.mask_dir, &cfg.backend) {
                    (Some(p), _) => p.clone(),
                    (None, BackendConfig::MaskDir { path }) => path.clone(),
                    _ => return Err(usage("--backend mask-dir needs --mask-dir")),
                };
                cfg.backend = BackendConfig::MaskDir { path };
            }
            Some(BackendChoice::Model) => {
                let path = match (&self.model, &cfg.backend) {
                    (Some(p), _) => p.clone(),
                    (None, BackendConfig::Model { path, .. }) => path.clone(),
                    _ => return Err(usage("--backend model needs --model")),
                };
                let kind = self.model_kind.or(config_kind).unwrap_or(ModelKind::Segmentation);
                cfg.backend = BackendConfig::Model { path, kind };
            }
        }
        Ok(())
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        2 => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .format(|buf, record| {
            writeln!(
                buf,
                "{} {} {} {}",
                record.level(),
                buf.timestamp_millis(),
                record.module_path().unwrap_or("-"),
                record.args()
            )
        })
        .try_init();
}

/// Parses `args` (program name first) and runs the command, watching
/// [`INTERRUPTED`] for cancellation.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_cancel(args, &INTERRUPTED)
}

pub fn run_with_cancel<I, T>(args: I, cancel: &AtomicBool) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    init_logging(cli.verbose);
    match execute(cli, cancel) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<UsageError>() {
                2
            } else {
                1
            }
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path).map_err(|e| usage(format!("{e:#}")))?,
        None => PipelineConfig::default(),
    };
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn execute(cli: Cli, cancel: &AtomicBool) -> anyhow::Result<()> {
    let mut cfg = load_config(&cli)?;
    if let Command::Segment { backend, .. }
    | Command::Gvi { backend, .. }
    | Command::Evaluate { backend, .. }
    | Command::Benchmark { backend, .. } = &cli.command
    {
        backend.apply(&mut cfg)?;
    }
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    let ctx = commands::Context { cfg, cancel };

    match cli.command {
        Command::Segment { manifest, out, .. } => commands::segment(&ctx, &manifest, &out),
        Command::Gvi {
            manifest,
            out,
            pool_pixels,
            ..
        } => commands::gvi(&ctx, &manifest, &out, pool_pixels),
        Command::Evaluate {
            manifest,
            out,
            table,
            split,
            pooled_iou,
            with_timing,
            name,
            ..
        } => commands::evaluate(
            &ctx,
            &commands::EvaluateArgs {
                table: table.unwrap_or_else(|| out.with_extension("txt")),
                manifest,
                out,
                split,
                pooled_iou,
                with_timing,
                name,
            },
        ),
        Command::ConvertCityscapes {
            labels,
            images,
            out,
            manifest,
            vegetation_id,
        } => {
            let manifest = manifest.unwrap_or_else(|| out.join("manifest.csv"));
            let id = vegetation_id.unwrap_or(ctx.cfg.vegetation_label_id);
            commands::convert_cityscapes(&ctx, &labels, &images, &out, &manifest, id)
        }
        Command::Split {
            manifest,
            out,
            sizes,
            no_stratify,
        } => {
            let sizes: [usize; 3] = sizes
                .try_into()
                .map_err(|_| usage("--sizes takes exactly three counts: train,val,test"))?;
            commands::split(&ctx, &manifest, &out, sizes, !no_stratify)
        }
        Command::SamplePoints {
            network,
            out,
            interval,
            subsample,
            headings,
            jitter,
        } => commands::sample_points(&ctx, &network, &out, interval, subsample, headings, jitter),
        Command::FetchImagery {
            points,
            out,
            endpoint,
            city,
        } => commands::fetch_imagery(&ctx, &points, &out, endpoint, &city),
        Command::Benchmark {
            manifest, repeats, out, ..
        } => bench::benchmark(&ctx, &manifest, repeats, out.as_deref()),
        Command::ExportGeojson { points, out } => commands::export_geojson(&points, &out),
        Command::Synthesize {
            out,
            n,
            width,
            height,
            cities,
        } => commands::synthesize(&ctx, &out, n, width, height, cities),
    }
}
