//! The `tailseek` command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 runtime or fit error,
//! 4 trial ended by the validity oracle (the record is still written).

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use tailseek_core::creative::{NegativeClusterSet, NoCommands, Termination, TrialRecord};
use tailseek_core::experiment::{
    cmd_sample_baseline, cmd_train_prior, label_negative, load_record, sha256_file, write_json, write_report,
    write_trial, ClusterFile, Experiment, ExperimentConfig,
};
use tailseek_core::{Error, Result};
use tailseek_service::{ServeOptions, DEFAULT_HOST, DEFAULT_PORT};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;
pub const EXIT_ORACLE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "tailseek", version, about = "Push a toy generative prior toward the tails of its own distribution")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the toy prior and write its checkpoint and loss curve.
    TrainPrior,
    /// Sample the unmodified prior and fit PCA and the baseline Gaussian.
    SampleBaseline,
    /// Run one creative-optimization trial.
    RunTrial(RunTrialArgs),
    /// Fit a negative cluster to samples of a recorded snapshot.
    LabelNegative(LabelArgs),
    /// Write plot-ready CSVs for a set of trial records.
    Report(ReportArgs),
    /// Start the HTTP steering service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct RunTrialArgs {
    /// Continue from the final state of an earlier record.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Negative-cluster file whose clusters are added to the trial.
    #[arg(long)]
    pub clusters: Option<PathBuf>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Never take the anchor branch.
    #[arg(long)]
    pub no_pullback: bool,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// Trial record to label.
    #[arg(long)]
    pub record: PathBuf,
    /// Snapshot index; defaults to the last snapshot.
    #[arg(long)]
    pub snapshot: Option<usize>,
    /// Comma-separated sample indices within the snapshot; defaults to all.
    #[arg(long, value_delimiter = ',')]
    pub samples: Option<Vec<usize>>,
    /// Cluster strength.
    #[arg(long, default_value_t = 1.0)]
    pub alpha: f64,
    /// Output file; defaults to `negative-clusters.json` in the output
    /// directory or next to the record.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Add to the clusters already in the output file.
    #[arg(long)]
    pub append: bool,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    pub records: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, default_value = DEFAULT_HOST)]
    pub host: String,
    #[arg(long, default_value_t = DEFAULT_PORT)]
    pub port: u16,
    /// Serve a built UI bundle from this directory at `/`.
    #[arg(long)]
    pub serve_ui: Option<PathBuf>,
}

/// Parses `args` and runs the command, writing progress to `out` and
/// errors to `err`. Returns the exit code.
pub fn run_from<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli, out, err),
        Err(e) => {
            let _ = write!(err, "{e}");
            if e.use_stderr() {
                EXIT_CONFIG
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn run(cli: Cli, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    match dispatch(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

fn cwd_path(p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        std::env::current_dir().map(|d| d.join(p)).unwrap_or_else(|_| p.to_path_buf())
    }
}

/// Loads `--config` and applies `--seed` and `--out`.
pub fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let path = common.config.as_ref().ok_or_else(|| Error::Config("--config is required for this command".into()))?;
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(s) = common.seed {
        cfg.master_seed = s;
    }
    if let Some(o) = &common.out {
        cfg.output_dir = cwd_path(o);
    }
    Ok(cfg)
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::Config(format!("{what} not found: {}", path.display())))
    }
}

fn io(e: std::io::Error) -> Error {
    Error::Io(e)
}

fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    match &cli.command {
        Command::TrainPrior => {
            let cfg = load_config(&cli.common)?;
            let ck = cmd_train_prior(&cfg)?;
            let path = cfg.checkpoint_path();
            writeln!(out, "checkpoint: {}", path.display()).map_err(io)?;
            writeln!(out, "sha256: {}", sha256_file(&path)?).map_err(io)?;
            writeln!(out, "training steps: {}", ck.train.steps).map_err(io)?;
            Ok(EXIT_OK)
        }
        Command::SampleBaseline => {
            let cfg = load_config(&cli.common)?;
            let b = cmd_sample_baseline(&cfg)?;
            writeln!(out, "baseline: {}", cfg.baseline_dir().display()).map_err(io)?;
            writeln!(out, "samples: {}", b.samples.len()).map_err(io)?;
            writeln!(out, "explained variance total: {:.6}", b.summary.explained_variance_total).map_err(io)?;
            Ok(EXIT_OK)
        }
        Command::RunTrial(a) => run_trial_cmd(cli, a, out),
        Command::LabelNegative(a) => label_cmd(cli, a, out),
        Command::Report(a) => {
            for r in &a.records {
                require(r, "trial record")?;
            }
            let records = a.records.iter().map(|r| load_record(r)).collect::<Result<Vec<_>>>()?;
            let dir = cli.common.out.clone().unwrap_or_else(|| PathBuf::from("report"));
            write_report(&dir, &records)?;
            writeln!(out, "report: {} ({} records)", dir.display(), records.len()).map_err(io)?;
            Ok(EXIT_OK)
        }
        Command::Serve(a) => {
            let base_dir = match &cli.common.config {
                Some(c) => cwd_path(c).parent().map(Path::to_path_buf).unwrap_or_default(),
                None => cwd_path(Path::new(".")),
            };
            let opts = ServeOptions { host: a.host.clone(), port: a.port, base_dir, ui_dir: a.serve_ui.clone() };
            let rt = tokio::runtime::Runtime::new().map_err(io)?;
            rt.block_on(tailseek_service::serve(opts, |addr| {
                let _ = writeln!(out, "listening on http://{addr}");
                let _ = out.flush();
            }))
            .map_err(io)?;
            Ok(EXIT_OK)
        }
    }
}

fn run_trial_cmd(cli: &Cli, a: &RunTrialArgs, out: &mut dyn Write) -> Result<i32> {
    let mut cfg = load_config(&cli.common)?;
    if let Some(n) = a.max_steps {
        cfg.trial.max_steps = n;
    }
    if a.no_pullback {
        cfg.trial.anchor_enabled = false;
    }
    let extra = match &a.clusters {
        Some(p) => {
            require(p, "negative cluster file")?;
            Some(ClusterFile::load(p)?.clusters)
        }
        None => None,
    };
    let parent = match &a.resume {
        Some(p) => {
            require(p, "trial record")?;
            Some(load_record(p)?)
        }
        None => None,
    };
    let exp = Experiment::load(&cfg)?;
    let seed = cfg.master_seed;
    let (space, mut clusters) = match &parent {
        Some(p) => (p.final_space.clone(), p.negative_clusters.clone()),
        None => (exp.initial_space(seed)?, exp.initial_clusters()?),
    };
    for c in extra.iter().flat_map(NegativeClusterSet::iter) {
        clusters.push(c.clone())?;
    }
    let mut record = exp.run(seed, space, clusters, &mut NoCommands, &mut |_| {})?;
    record.parent = parent.map(|p| p.config_hash);
    let path = write_trial(&cfg.output_dir(), &record)?;
    summarize(out, &record, &path).map_err(io)?;
    Ok(match record.termination {
        Termination::OracleRejected => EXIT_ORACLE,
        Termination::Diverged => EXIT_RUNTIME,
        Termination::Completed | Termination::StoppedByUser => EXIT_OK,
    })
}

fn summarize(out: &mut dyn Write, r: &TrialRecord, path: &Path) -> std::io::Result<()> {
    writeln!(out, "record: {}", path.display())?;
    writeln!(out, "termination: {}", r.termination.as_str())?;
    writeln!(out, "iterations: {}", r.rows.len())?;
    writeln!(out, "negative clusters: {}", r.negative_clusters.len())?;
    if let Some(s) = r.final_snapshot() {
        writeln!(
            out,
            "final snapshot (iteration {}): median percentile {:.2}, mean mahalanobis {:.3}, beyond 3 sigma {:.3}",
            s.iteration, s.stats.median_percentile, s.stats.mean_mahalanobis, s.stats.fraction_beyond_3sigma
        )?;
    }
    Ok(())
}

fn label_cmd(cli: &Cli, a: &LabelArgs, out: &mut dyn Write) -> Result<i32> {
    require(&a.record, "trial record")?;
    let record = load_record(&a.record)?;
    let cluster = label_negative(&record, a.snapshot, a.samples.as_deref(), a.alpha)?;
    let path = match (&a.output, &cli.common.out) {
        (Some(p), _) => p.clone(),
        (None, Some(dir)) => dir.join("negative-clusters.json"),
        (None, None) => a.record.with_file_name("negative-clusters.json"),
    };
    let mut set = if a.append && path.is_file() { ClusterFile::load(&path)?.clusters } else { NegativeClusterSet::new() };
    set.push(cluster)?;
    write_json(&path, &ClusterFile::new(set.clone()))?;
    writeln!(out, "negative clusters: {} ({} total)", path.display(), set.len()).map_err(io)?;
    Ok(EXIT_OK)
}
