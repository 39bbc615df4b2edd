//! Command-line pipeline: extract, harmonize, infer, evaluate, report.

pub mod config;
pub mod error;
pub mod evaluate;
pub mod layout;
pub mod manifest;
pub mod provenance;
pub mod report;
pub mod stages;
pub mod synth;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use stainloop_core::inference::PathwayKind;

use crate::config::{RunConfig, TIMEOUT_ENV};
use crate::error::{CliError, CliResult};
use crate::layout::{RunLayout, StageStatus};
use crate::manifest::Manifest;

#[derive(Debug, Parser)]
#[command(name = "stainloop", version, about = "Cross-site virtual destaining and restaining evaluation pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Debug, Args)]
pub struct RunArgs {
    /// Dataset manifest (TOML).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Run configuration (TOML); defaults apply without one.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory; overrides `out` in the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Cores processed in parallel [default: available CPUs].
    #[arg(long, short)]
    pub jobs: Option<usize>,
    /// Recompute even when outputs are up to date.
    #[arg(long)]
    pub force: bool,
    /// Run only this inference pathway.
    #[arg(long, value_parser = parse_pathway)]
    pub pathway: Option<PathwayKind>,
    /// Compute metrics without rigid alignment.
    #[arg(long)]
    pub no_align: bool,
}

fn parse_pathway(s: &str) -> Result<PathwayKind, String> {
    s.parse().map_err(|e: stainloop_core::Error| e.to_string())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MockRole {
    Destain,
    Stain,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Crop cores out of the slides and resample to the target MPP.
    Extract(RunArgs),
    /// Stain-normalize H&E cores and calibrate unstained cores.
    Harmonize(RunArgs),
    /// Run the configured inference pathways.
    Infer(RunArgs),
    /// Metrics, intensity differences, aggregates and statistics.
    Evaluate(RunArgs),
    /// Render report.md from an evaluated run directory.
    Report {
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Every stage in order, then the report.
    All(RunArgs),
    /// Write the bundled synthetic dataset (slides, ROIs, references,
    /// manifest and mock-backend config).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 6)]
        cores: usize,
        #[arg(long, default_value_t = 256)]
        size: u32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
    /// Affine mock model for `external_command` backends:
    /// `stainloop mock-backend --role destain {in_dir} {out_dir}`.
    MockBackend {
        #[arg(long, value_enum)]
        role: MockRole,
        in_dir: PathBuf,
        out_dir: PathBuf,
    },
}

/// Everything a stage needs.
pub struct Context {
    pub manifest: Manifest,
    pub config: RunConfig,
    pub layout: RunLayout,
    pub force: bool,
    pub align: bool,
    /// Pathways run by `infer`.
    pub pathways: Vec<PathwayKind>,
    pool: rayon::ThreadPool,
}

impl Context {
    pub fn from_args(args: &RunArgs) -> CliResult<Self> {
        let mut config = match &args.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        config.apply_timeout_env(std::env::var(TIMEOUT_ENV).ok().as_deref())?;
        let mut manifest = Manifest::load(&args.manifest)?;
        manifest.check_producible(&config.pathways)?;
        manifest.cores.sort_by(|a, b| a.core_id.cmp(&b.core_id));
        let out = args.out.clone().or_else(|| config.out.clone()).ok_or_else(|| {
            CliError::Config("no run directory: pass --out or set `out` in the config".into())
        })?;
        let jobs = match args.jobs {
            Some(0) => return Err(CliError::Config("--jobs must be at least 1".into())),
            Some(n) => n,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        };
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
        let pathways = match args.pathway {
            Some(p) => vec![p],
            None => config.pathways.clone(),
        };
        Ok(Self {
            align: config.align && !args.no_align,
            manifest,
            config,
            layout: RunLayout::new(out),
            force: args.force,
            pathways,
            pool,
        })
    }

    /// Order-preserving parallel map on the `--jobs` pool.
    pub fn par_map<T: Sync, R: Send>(&self, items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
        self.pool.install(|| items.par_iter().map(f).collect())
    }
}

fn log_stage(status: &StageStatus) {
    let ok = status.cores.iter().filter(|c| c.succeeded()).count();
    log::info!("{}: {ok}/{} core(s) succeeded", status.stage, status.cores.len());
    for c in &status.cores {
        for w in &c.warnings {
            log::warn!("{} {}: {w}", status.stage, c.core_id);
        }
    }
    for c in status.failures() {
        log::error!("{} {}: {}", status.stage, c.core_id, c.reason.as_deref().unwrap_or("failed"));
    }
}

fn run_stage(ctx: &Context, f: fn(&Context) -> CliResult<StageStatus>) -> CliResult<StageStatus> {
    let status = f(ctx)?;
    status.save(&ctx.layout)?;
    log_stage(&status);
    Ok(status)
}

/// Exit code over several stages: a core counts as failed if any stage
/// failed it.
pub fn combined_exit_code(statuses: &[StageStatus]) -> i32 {
    let mut all: Vec<&str> = statuses.iter().flat_map(|s| s.cores.iter().map(|c| c.core_id.as_str())).collect();
    all.sort_unstable();
    all.dedup();
    let failed: std::collections::BTreeSet<&str> =
        statuses.iter().flat_map(|s| s.failures().map(|c| c.core_id.as_str())).collect();
    if failed.is_empty() {
        0
    } else if failed.len() == all.len() {
        1
    } else {
        2
    }
}

fn execute(command: &Command) -> CliResult<i32> {
    match command {
        Command::Extract(a) => Ok(run_stage(&Context::from_args(a)?, stages::extract)?.exit_code()),
        Command::Harmonize(a) => Ok(run_stage(&Context::from_args(a)?, stages::harmonize)?.exit_code()),
        Command::Infer(a) => Ok(run_stage(&Context::from_args(a)?, stages::infer)?.exit_code()),
        Command::Evaluate(a) => Ok(run_stage(&Context::from_args(a)?, evaluate::evaluate)?.exit_code()),
        Command::Report { out } => {
            print!("{}", report::report(&RunLayout::new(out))?);
            Ok(0)
        }
        Command::All(a) => {
            let ctx = Context::from_args(a)?;
            let mut statuses = Vec::new();
            for f in [stages::extract, stages::harmonize, stages::infer, evaluate::evaluate] {
                statuses.push(run_stage(&ctx, f)?);
            }
            report::report(&ctx.layout)?;
            log::info!("report written to {}", ctx.layout.report_path().display());
            Ok(combined_exit_code(&statuses))
        }
        Command::Synth { out, cores, size, seed } => {
            let opts = synth::SynthOptions {
                cores: *cores,
                size: *size,
                seed: *seed,
            };
            let manifest = synth::write_dataset(out, opts)?;
            println!("{}", manifest.display());
            Ok(0)
        }
        Command::MockBackend { role, in_dir, out_dir } => {
            let spec = match role {
                MockRole::Destain => synth::destain_mock(),
                MockRole::Stain => synth::stain_mock(),
            };
            synth::mock_backend(in_dir, out_dir, &spec)?;
            Ok(0)
        }
    }
}

/// Run a parsed command line; returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    match execute(&cli.command) {
        Ok(code) => code,
        Err(e) => {
            log::error!("{e}");
            eprintln!("error: {e}");
            1
        }
    }
}
