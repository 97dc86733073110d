//! `dba`: run decision-boundary active learning experiments and serve
//! annotation sessions.

mod source;

use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dba_core::decoder::{render_strip, RenderOptions};
use dba_core::geometry::{sample_line, DEFAULT_RESOLUTION};
use dba_core::harness::{bench_noise, bench_pairs, bench_strategies, write_csv, RunSummary};
use dba_core::learner::{run_experiment, AnnotationMode, ExperimentConfig, OracleKind};
use dba_core::model::{SolverConfig, SolverMethod};
use dba_core::strategies::QueryStrategy;
use dba_service::ServiceConfig;

use source::DataSource;

/// A bad flag value or flag combination (exit code 2).
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

#[derive(Parser)]
#[command(name = "dba", version, about = "Active learning by decision-boundary annotation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulated experiment; writes transcript.jsonl and summary.csv.
    Run(RunArgs),
    /// Repeated-experiment benchmarks.
    #[command(subcommand)]
    Bench(BenchCommand),
    /// Serve human annotation sessions over HTTP.
    Serve(ServeArgs),
    /// Render the first query line of a run as a PNG strip.
    RenderLine(RenderLineArgs),
    /// Write a synthetic dataset to a file.
    Synth(SynthArgs),
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Every strategy in sample and boundary mode.
    Strategies(BenchArgs),
    /// Boundary mode under increasing annotation noise, against the sample baseline.
    Noise(NoiseArgs),
    /// Sample and boundary mode on every class pair of a multiclass dataset.
    Pairs(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Dual,
    Subgradient,
}

#[derive(Args, Clone)]
struct ExperimentArgs {
    /// Embedding file, or `synth[:k=..,sep=..,train=..,test=..,seed=..]`.
    #[arg(long, default_value = "synth")]
    data: DataSource,
    /// uncertainty | uncertainty-dense[:beta] | cluster<N> | random
    #[arg(long, default_value = "uncertainty")]
    strategy: QueryStrategy,
    #[arg(long, default_value_t = 150)]
    queries: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    lambda: f64,
    /// Latent distance between images on a line.
    #[arg(long, default_value_t = DEFAULT_RESOLUTION, allow_negative_numbers = true)]
    resolution: f64,
    #[arg(long, default_value_t = 1)]
    init_per_class: usize,
    #[arg(long, value_enum, default_value_t = Solver::Dual)]
    solver: Solver,
}

impl ExperimentArgs {
    fn config(&self) -> ExperimentConfig {
        ExperimentConfig {
            strategy: self.strategy,
            n_queries: self.queries,
            seed: self.seed,
            lambda: self.lambda,
            resolution: self.resolution,
            init_per_class: self.init_per_class,
            solver: match self.solver {
                Solver::Dual => SolverConfig::default(),
                Solver::Subgradient => SolverConfig {
                    method: SolverMethod::Subgradient,
                    ..SolverConfig::default()
                },
            },
            ..ExperimentConfig::default()
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    #[arg(long, default_value = "boundary")]
    mode: AnnotationMode,
    /// Annotation noise in images; omit for the noiseless oracle.
    #[arg(long, allow_negative_numbers = true)]
    sigma: Option<f64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    #[arg(long, default_value_t = 15)]
    repeats: usize,
    /// Worker threads for independent repeats.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Output directory for table.csv and runs.csv.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Strategies to compare (`bench strategies` only).
    #[arg(long, value_delimiter = ',', default_value = "uncertainty,uncertainty-dense,cluster5,random")]
    strategies: Vec<QueryStrategy>,
}

#[derive(Args)]
struct NoiseArgs {
    #[command(flatten)]
    bench: BenchArgs,
    /// Noise levels in images.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5", allow_negative_numbers = true)]
    sigmas: Vec<f64>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "DBA_DATA", default_value = "synth:k=2,sep=4,train=500,test=500")]
    data: DataSource,
    #[arg(long, env = "DBA_BIND", default_value = "127.0.0.1:8080")]
    bind: SocketAddr,
    /// Directory for session transcripts; sessions are in-memory only without it.
    #[arg(long, env = "DBA_TRANSCRIPTS")]
    transcripts: Option<PathBuf>,
    /// Seconds an idle session stays in memory.
    #[arg(long, env = "DBA_SESSION_TTL", default_value_t = 3600)]
    ttl: u64,
    /// Edge softness of rendered glyphs.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    blur: f64,
}

#[derive(Args)]
struct RenderLineArgs {
    #[command(flatten)]
    experiment: ExperimentArgs,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    blur: f64,
    /// PNG output path.
    #[arg(long, default_value = "line.png")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// `synth[:...]` or `synth-classes[:...]`.
    #[arg(long, default_value = "synth")]
    data: DataSource,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 for configuration problems, 3 for data problems, 1 otherwise.
fn exit_code(e: &anyhow::Error) -> u8 {
    use dba_core::Error as E;
    for cause in e.chain() {
        if cause.is::<ConfigError>() {
            return 2;
        }
        if let Some(core) = cause.downcast_ref::<E>() {
            return match core {
                E::InvalidArgument(_) | E::InvalidResolution(_) | E::PoolTooSmall { .. } => 2,
                E::Parse { .. } | E::InvalidData(_) | E::DimensionMismatch { .. } | E::NoPoints | E::Io(_) => 3,
                _ => 1,
            };
        }
    }
    1
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Run(args) => run(args),
        Command::Bench(BenchCommand::Strategies(args)) => strategies(args),
        Command::Bench(BenchCommand::Noise(args)) => noise(args),
        Command::Bench(BenchCommand::Pairs(args)) => pairs(args),
        Command::Serve(args) => serve(args),
        Command::RenderLine(args) => render_line(args),
        Command::Synth(args) => synth(args),
    }
}

fn validated(config: ExperimentConfig) -> Result<ExperimentConfig> {
    config.validate().map_err(|e| ConfigError(e.to_string()))?;
    Ok(config)
}

fn check_jobs(jobs: usize, repeats: usize) -> Result<()> {
    if jobs == 0 {
        return Err(ConfigError("--jobs must be at least 1".into()).into());
    }
    if repeats == 0 {
        return Err(ConfigError("--repeats must be at least 1".into()).into());
    }
    Ok(())
}

fn create_out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_rows<T: serde::Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_csv(std::io::BufWriter::new(file), rows)?;
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let config = validated(ExperimentConfig {
        annotation_mode: args.mode,
        oracle: match args.sigma {
            Some(sigma) => OracleKind::Noisy { sigma },
            None => OracleKind::Svm,
        },
        ..args.experiment.config()
    })?;
    let data = args.experiment.data.binary()?;
    let result = run_experiment(data.clone(), &config)?;
    create_out_dir(&args.out)?;
    let transcript_path = args.out.join("transcript.jsonl");
    let mut file = std::io::BufWriter::new(fs::File::create(&transcript_path)?);
    result.transcript.write_jsonl(&mut file)?;
    file.flush()?;
    let summary = RunSummary::new(&data.name, &config, 0, &result);
    write_rows(&args.out.join("summary.csv"), std::slice::from_ref(&summary))?;
    println!(
        "{} {} sigma={} queries={} aulc={:.4} mean_ap={:.4} final_acc={:.4}{}",
        summary.strategy,
        summary.mode,
        summary.sigma,
        summary.queries,
        summary.aulc,
        summary.mean_ap,
        summary.final_accuracy,
        if summary.truncated { " (pool exhausted)" } else { "" }
    );
    Ok(())
}

fn strategies(args: BenchArgs) -> Result<()> {
    check_jobs(args.jobs, args.repeats)?;
    let base = validated(args.experiment.config())?;
    let data = args.experiment.data.binary()?;
    let table = bench_strategies(&data, &base, &args.strategies, args.repeats, args.jobs)?;
    create_out_dir(&args.out)?;
    write_rows(&args.out.join("table.csv"), &table.rows)?;
    write_rows(&args.out.join("runs.csv"), &table.runs)?;
    println!("{:<20} {:<9} {:>17} {:>15} {:>9}", "strategy", "mode", "AULC", "mAP", "p");
    for r in &table.rows {
        println!(
            "{:<20} {:<9} {:>8.3} ± {:<6.3} {:>6.3} ± {:<5.3} {:>9.2e}{}",
            r.strategy,
            r.mode,
            r.aulc_mean,
            r.aulc_std,
            r.map_mean,
            r.map_std,
            r.p_value,
            if r.significant { " *" } else { "" }
        );
    }
    Ok(())
}

fn noise(args: NoiseArgs) -> Result<()> {
    let b = &args.bench;
    check_jobs(b.jobs, b.repeats)?;
    if args.sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
        return Err(ConfigError("--sigmas must be finite and ≥ 0".into()).into());
    }
    let base = validated(b.experiment.config())?;
    let data = b.experiment.data.binary()?;
    let table = bench_noise(&data, &base, &args.sigmas, b.repeats, b.jobs)?;
    create_out_dir(&b.out)?;
    write_rows(&b.out.join("table.csv"), &table.rows)?;
    write_rows(&b.out.join("runs.csv"), &table.runs)?;
    println!("{:<8} {:<9} {:>17} {:>9}", "sigma", "mode", "AULC", "p");
    for r in &table.rows {
        let sigma = r.sigma.map_or("-".to_string(), |s| s.to_string());
        println!("{:<8} {:<9} {:>8.3} ± {:<6.3} {:>9.2e}", sigma, r.mode, r.aulc_mean, r.aulc_std, r.p_value);
    }
    println!(
        "trend: spearman(sigma, AULC) = {:.3}; monotone non-increasing: {}",
        table.spearman,
        if table.is_monotone() { "yes" } else { "no" }
    );
    Ok(())
}

fn pairs(args: BenchArgs) -> Result<()> {
    check_jobs(args.jobs, args.repeats)?;
    let base = validated(args.experiment.config())?;
    let data = args.experiment.data.multiclass()?;
    let table = bench_pairs(&data, &base, args.repeats, args.jobs)?;
    create_out_dir(&args.out)?;
    write_rows(&args.out.join("table.csv"), &table.rows)?;
    write_rows(&args.out.join("runs.csv"), &table.runs)?;
    println!("{:<8} {:<9} {:>9} {:>7}", "pair", "mode", "AULC", "mAP");
    for r in &table.rows {
        println!("{:<8} {:<9} {:>9.3} {:>7.3}", r.pair, r.mode, r.aulc_mean, r.map_mean);
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<()> {
    if !(args.blur.is_finite() && args.blur >= 0.0) {
        return Err(ConfigError("--blur must be finite and ≥ 0".into()).into());
    }
    let data = args.data.binary()?;
    let config = ServiceConfig {
        bind: args.bind,
        transcript_dir: args.transcripts,
        session_ttl: Duration::from_secs(args.ttl.max(1)),
        render: RenderOptions {
            blur: args.blur,
            ..RenderOptions::default()
        },
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(dba_service::serve(data, config))?;
    Ok(())
}

fn render_line(args: RenderLineArgs) -> Result<()> {
    let config = validated(args.experiment.config())?;
    let data = args.experiment.data.binary()?;
    let mut learner = dba_core::learner::ActiveLearner::new(data, config)?;
    let pending = learner
        .next_query()?
        .cloned()
        .ok_or_else(|| anyhow::anyhow!("no query available"))?;
    let line = pending
        .line
        .ok_or_else(|| anyhow::anyhow!("no line through sample {} (it lies on the boundary)", pending.sample_id))?;
    let samples = sample_line(&line);
    let strip = render_strip(
        &samples,
        &RenderOptions {
            blur: args.blur,
            ..RenderOptions::default()
        },
    )?;
    fs::write(&args.out, strip.image.to_png()?).with_context(|| format!("writing {}", args.out.display()))?;
    let info = serde_json::json!({
        "sample_id": pending.sample_id,
        "t_lo": line.t_lo,
        "t_hi": line.t_hi,
        "t_values": samples.iter().map(|s| s.t).collect::<Vec<_>>(),
        "zones": strip.zones,
        "png": args.out,
    });
    println!("{}", serde_json::to_string_pretty(&info)?);
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let text = match &args.data {
        DataSource::File(_) => return Err(ConfigError("--data must be a synth or synth-classes spec".into()).into()),
        DataSource::TwoGaussians { .. } => args.data.binary()?.to_embedding_string(),
        DataSource::GaussianClasses { .. } => args.data.multiclass()?.to_embedding_string(),
    };
    fs::write(&args.out, text).with_context(|| format!("writing {}", args.out.display()))?;
    Ok(())
}
