//! `eda-explain`: explain one exploratory step over CSV inputs, run the
//! sampling evaluation, or serve the HTTP session API.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use eda_explain::engine::{explain_step, ExplainConfig};
use eda_explain::eval::{reports_to_csv, EvalError, run_trials, synthetic_trials, PlantedSignal};
use eda_explain::frame::{read_csv_path, CsvOptions, DataFrame};
use eda_explain::measure::{MeasureRegistry, SamplingConfig};
use eda_explain::ops::{make_step, parse_operation_any, ExploratoryStep, OpError};
use eda_explain::render::{render_svg, report_json, serialize_explanations, OutputFormat};
use eda_explain::skyline::RankWeights;
use eda_explain_service::ServiceConfig;

#[derive(Parser)]
#[command(name = "eda-explain", version, about = "Explanations for exploratory data analysis steps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one operation and print its explanations.
    Explain(ExplainArgs),
    /// Compare sampled against exact interestingness rankings; writes CSV.
    Eval(EvalArgs),
    /// Serve the HTTP session API.
    Serve(ServeArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Args)]
struct EngineArgs {
    /// Equal-frequency bin counts for numeric partitions.
    #[arg(long, value_delimiter = ',', default_value = "5,10")]
    bins: Vec<usize>,
    /// Interestingness measure; the operation's default when omitted.
    #[arg(long)]
    measure: Option<String>,
    /// Scored rows per input when sampling is on.
    #[arg(long, default_value_t = 5000)]
    sample_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Never sample, whatever the input size.
    #[arg(long)]
    exact: bool,
    /// Skip mining many-to-one partitions.
    #[arg(long)]
    no_m2o: bool,
}

#[derive(Args)]
struct ExplainArgs {
    /// Input CSV; repeat for joins and unions. Frames are named by file stem.
    #[arg(long = "data", required = true)]
    data: Vec<PathBuf>,
    /// Operation as DSL text or JSON.
    #[arg(long)]
    op: String,
    #[command(flatten)]
    engine: EngineArgs,
    /// Keep only the k best explanations.
    #[arg(long)]
    top_k: Option<usize>,
    /// Ranking weights for interestingness and contribution.
    #[arg(long, value_name = "A,B", value_parser = parse_weights, allow_hyphen_values = true)]
    weights: Option<(f64, f64)>,
    /// Only score these output columns.
    #[arg(long, value_delimiter = ',')]
    columns: Option<Vec<String>>,
    #[arg(long, value_enum, default_value = "json")]
    format: Format,
    /// Write output here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write one SVG chart per explanation into this directory.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Evaluate on this CSV (with --op) instead of synthetic data.
    #[arg(long = "data", requires = "op")]
    data: Vec<PathBuf>,
    #[arg(long)]
    op: Option<String>,
    #[arg(long, default_value_t = 100_000)]
    rows: usize,
    #[arg(long, default_value_t = 15)]
    cols: usize,
    /// Mean shift of the planted column on the filtered rows.
    #[arg(long, default_value_t = 1.5)]
    shift: f64,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "1000,5000,10000")]
    sample_sizes: Vec<usize>,
    /// Number of sampling seeds per size, starting at 0.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long)]
    measure: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "EDA_EXPLAIN_ADDR", default_value = "127.0.0.1:8080")]
    addr: SocketAddr,
    /// Idle session lifetime in seconds.
    #[arg(long, env = "EDA_EXPLAIN_TTL", default_value_t = 3600)]
    ttl: u64,
    /// Upload cap in bytes.
    #[arg(long, env = "EDA_EXPLAIN_UPLOAD_CAP", default_value_t = 64 * 1024 * 1024)]
    upload_cap: usize,
    /// Seconds a step request waits before answering 202.
    #[arg(long, env = "EDA_EXPLAIN_STEP_TIMEOUT", default_value_t = 30)]
    step_timeout: u64,
    #[arg(long, env = "EDA_EXPLAIN_TOKEN")]
    token: Option<String>,
    #[arg(long, env = "EDA_EXPLAIN_CORS_ORIGIN")]
    cors_origin: Option<String>,
    #[arg(long, env = "EDA_EXPLAIN_SNAPSHOT_DIR")]
    snapshot_dir: Option<PathBuf>,
}

/// Exit 2 for bad invocations, 1 for everything the data caused.
enum Failure {
    Usage(anyhow::Error),
    Data(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()),
        )
        .init();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e:#}");
        return ExitCode::from(2);
    }
    let out = match cli.command {
        Command::Explain(a) => explain(a),
        Command::Eval(a) => eval(a),
        Command::Serve(a) => serve(a),
    };
    match out {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn configure_threads() -> anyhow::Result<()> {
    if let Ok(v) = std::env::var("EDA_EXPLAIN_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| anyhow!("EDA_EXPLAIN_THREADS must be a positive integer, got '{v}'"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn load_frames(paths: &[PathBuf]) -> CliResult<Vec<Arc<DataFrame>>> {
    let mut seen = HashSet::new();
    let mut frames = Vec::with_capacity(paths.len());
    for path in paths {
        let stem = path.file_stem().map_or("input".into(), |s| s.to_string_lossy().into_owned());
        let mut name = stem.clone();
        let mut k = 2;
        while !seen.insert(name.clone()) {
            name = format!("{stem}_{k}");
            k += 1;
        }
        let frame = read_csv_path(path, &CsvOptions::default())
            .with_context(|| format!("loading {}", path.display()))?
            .renamed(name);
        frames.push(Arc::new(frame));
    }
    Ok(frames)
}

/// Parse errors are the caller's fault; everything else about building the
/// step depends on the data.
fn build_step(op: &str, frames: Vec<Arc<DataFrame>>) -> CliResult<ExploratoryStep> {
    let op = parse_operation_any(op).map_err(usage)?;
    make_step(op, frames).map_err(|e| match e {
        OpError::Arity { .. } | OpError::InvalidSpec(_) => usage(e),
        e => Failure::Data(e.into()),
    })
}

fn engine_config(step: &ExploratoryStep, e: &EngineArgs) -> CliResult<ExplainConfig> {
    if e.bins.is_empty() || e.bins.contains(&0) {
        return Err(usage(anyhow!("--bins needs positive counts")));
    }
    if e.sample_size == 0 {
        return Err(usage(anyhow!("--sample-size must be at least 1")));
    }
    let mut cfg = ExplainConfig {
        measure: e.measure.clone(),
        ..ExplainConfig::default()
    };
    cfg.registry
        .resolve(cfg.measure.as_deref(), step.op())
        .map_err(usage)?;
    cfg.partitions.bin_counts = e.bins.clone();
    cfg.partitions.many_to_one = !e.no_m2o;
    cfg.sampling = if e.exact {
        SamplingConfig::exact()
    } else {
        SamplingConfig::auto(step, e.sample_size, e.seed)
    };
    Ok(cfg)
}

fn write_output(out: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match out {
        Some(p) => fs::write(p, bytes).with_context(|| format!("writing {}", p.display()))?,
        None => {
            let mut o = std::io::stdout().lock();
            o.write_all(bytes).context("writing stdout")?;
            o.flush().context("writing stdout")?;
        }
    }
    Ok(())
}

fn explain(a: ExplainArgs) -> CliResult<()> {
    let frames = load_frames(&a.data)?;
    let step = build_step(&a.op, frames)?;
    let mut cfg = engine_config(&step, &a.engine)?;
    if a.top_k == Some(0) {
        return Err(usage(anyhow!("--top-k must be at least 1")));
    }
    cfg.top_k = a.top_k;
    if let Some((wi, wc)) = a.weights {
        cfg.weights = RankWeights::new(wi, wc).map_err(usage)?;
    }
    if let Some(cols) = &a.columns {
        let out = step.output();
        if let Some(bad) = cols.iter().find(|c| out.column(c).is_none()) {
            return Err(Failure::Data(anyhow!("unknown output column '{bad}'")));
        }
        cfg.restrict = Some(cols.clone());
    }
    let result = explain_step(&step, &cfg).context("explaining step")?;

    let mut bytes = match a.format {
        Format::Json => {
            let diag = serde_json::to_value(&result.diagnostics).context("serializing diagnostics")?;
            let report = report_json(&step, &result.explanations, Some(diag));
            serde_json::to_vec_pretty(&report).context("serializing report")?
        }
        Format::Text if result.explanations.is_empty() => b"no explanations".to_vec(),
        Format::Text => {
            let mut b = serialize_explanations(&result.explanations, OutputFormat::Text);
            b.pop();
            b
        }
    };
    bytes.push(b'\n');
    write_output(a.out.as_deref(), &bytes)?;

    if let Some(dir) = &a.svg {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        for (i, e) in result.explanations.iter().enumerate() {
            let p = dir.join(format!("explanation_{}.svg", i + 1));
            fs::write(&p, render_svg(e)).with_context(|| format!("writing {}", p.display()))?;
        }
    }
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult<()> {
    if a.sample_sizes.is_empty() || a.sample_sizes.contains(&0) || a.seeds == 0 || a.k == 0 {
        return Err(usage(anyhow!("--sample-sizes, --seeds and --k must be positive")));
    }
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let reports = if a.data.is_empty() {
        if a.measure.is_some() || a.op.is_some() {
            return Err(usage(anyhow!("--op and --measure apply only with --data")));
        }
        let planted = PlantedSignal {
            shift_strength: a.shift,
            ..PlantedSignal::default()
        };
        synthetic_trials(a.rows, a.cols, &planted, a.data_seed, &a.sample_sizes, &seeds, a.k).map_err(|e| match e {
            EvalError::TooFewRows(_) | EvalError::TooFewColumns(_) => usage(e),
            e => Failure::Data(e.into()),
        })?
    } else {
        let frames = load_frames(&a.data)?;
        let op = a.op.as_deref().expect("clap enforces --op with --data");
        let step = build_step(op, frames)?;
        let registry = MeasureRegistry::default();
        let (_, measure) = registry.resolve(a.measure.as_deref(), step.op()).map_err(usage)?;
        run_trials(&step, measure.as_ref(), &a.sample_sizes, &seeds, a.k).context("running trials")?
    };
    write_output(a.out.as_deref(), reports_to_csv(&reports).as_bytes())
}

fn serve(a: ServeArgs) -> CliResult<()> {
    if a.ttl == 0 {
        return Err(usage(anyhow!("--ttl must be positive")));
    }
    let config = ServiceConfig {
        ttl: Duration::from_secs(a.ttl),
        upload_cap: a.upload_cap,
        step_timeout: Duration::from_secs(a.step_timeout),
        bearer_token: a.token,
        cors_origin: a.cors_origin,
        snapshot_dir: a.snapshot_dir,
        ..ServiceConfig::default()
    };
    let rt = tokio::runtime::Runtime::new().context("starting runtime")?;
    rt.block_on(eda_explain_service::serve(config, a.addr))
        .context("serving")?;
    Ok(())
}

fn parse_weights(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected two comma-separated weights")?;
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("bad weight '{t}': {e}"));
    Ok((num(a)?, num(b)?))
}
