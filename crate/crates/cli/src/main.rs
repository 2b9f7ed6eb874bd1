//! `ratelab`: traces, log collection, datasets, training, evaluation,
//! comparison and drift checks from the command line.
//!
//! Every subcommand writes into `--out`, starting with a frozen
//! `resolved_config.toml`. Failures are reported on stderr as one JSON
//! object and a nonzero exit code.

mod config;

use std::fmt;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ratelab::eval::{compare, qoe, EvalReport, REPORT_FORMAT_VERSION};
use ratelab::learner::{self, load_model_file, save_model_file, write_curve_csv, TrainHyper, TrainOutcome, Validation};
use ratelab::oracle::{OracleConfig, OracleController};
use ratelab::pipeline::{build_dataset, evaluate, gen_corpus, run_corpus, ControllerSpec, CorpusEntry};
use ratelab::sim::{read_session_log_file, run_session, write_session_log_file, SessionLog};
use ratelab::telemetry::{drift_score, read_dataset_file, write_dataset_file};
use ratelab::trace::{parse_trace_csv, read_manifest, write_manifest, ManifestEntry};
use ratelab::{config_digest, Error};
use serde::Serialize;

use config::RunConfig;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    Io { path: PathBuf, message: String },
    Core(Error),
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Self::Usage(_) => "usage",
            Self::Config(_) => "config",
            Self::Io { .. } => "io",
            Self::Core(_) => "pipeline",
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            Self::Usage(_) | Self::Config(_) => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) | Self::Config(m) => f.write_str(m),
            Self::Io { path, message } => write!(f, "{}: {message}", path.display()),
            Self::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        Self::Core(e)
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Reports file-system failures of a core reader against `path`.
fn read_at<T>(path: &Path, r: std::result::Result<T, Error>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => CliError::io(path, io),
        e => CliError::Core(e),
    })
}

#[derive(Debug, Parser)]
#[command(name = "ratelab", version, about = "Offline-learned rate control pipeline")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (0 = one per core).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus: trace CSVs plus manifest.json.
    GenTraces {
        #[arg(long)]
        n_traces: Option<usize>,
        #[arg(long)]
        duration_ms: Option<u64>,
    },
    /// Replay every manifest trace under a controller and keep the logs.
    Collect {
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// The logging fleet; `gcc` replays the single default configuration.
        #[arg(long, value_enum, default_value_t = Baseline::GccPopulation)]
        controller: Baseline,
    },
    #[command(subcommand)]
    Dataset(DatasetCommand),
    /// Offline conservative distributional actor-critic.
    Train(TrainArgs),
    /// Behavior cloning baseline.
    TrainBc(TrainArgs),
    /// Evaluate a model or a built-in controller over a corpus.
    Eval {
        #[arg(long, conflicts_with = "controller", required_unless_present = "controller")]
        model: Option<PathBuf>,
        #[arg(long, value_enum)]
        controller: Option<Baseline>,
        /// Manifest file, or a directory containing manifest.json.
        #[arg(long, alias = "traces")]
        manifest: Option<PathBuf>,
    },
    /// Percentile deltas `(a - b) / b` between two evaluation reports.
    Compare { a: PathBuf, b: PathBuf },
    /// Per-feature KS drift between two datasets.
    Drift {
        a: PathBuf,
        b: PathBuf,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Replay one trace under the oracle, with its action set taken from a
    /// reference log.
    Oracle {
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        ref_log: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
enum DatasetCommand {
    /// Turn a directory of session logs into a transition dataset.
    Build {
        #[arg(long)]
        logs: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Baseline {
    Gcc,
    GccPopulation,
    Oracle,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Manifest of validation traces used to pick the best checkpoint.
    #[arg(long)]
    val_manifest: Option<PathBuf>,
    /// Also store the critics (needed only to resume training).
    #[arg(long)]
    with_critic: bool,
    #[arg(long, alias = "alpha")]
    cql_alpha: Option<f64>,
    #[arg(long, alias = "quantiles")]
    n_quantiles: Option<usize>,
    #[arg(long, alias = "gamma")]
    discount_gamma: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    actor_lr: Option<f64>,
    #[arg(long)]
    critic_lr: Option<f64>,
    #[arg(long)]
    bc_lr: Option<f64>,
    #[arg(long, alias = "tau")]
    polyak_tau: Option<f64>,
    #[arg(long, alias = "kappa")]
    huber_kappa: Option<f64>,
    #[arg(long, alias = "steps")]
    grad_steps: Option<usize>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    gru_hidden: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    hidden_layers: Option<Vec<usize>>,
    #[arg(long)]
    twin_critic: Option<bool>,
}

impl TrainArgs {
    fn apply(&self, h: &mut TrainHyper) {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = &self.$f {
                    h.$f = v.clone();
                }
            )*};
        }
        set!(
            cql_alpha,
            n_quantiles,
            discount_gamma,
            batch_size,
            actor_lr,
            critic_lr,
            bc_lr,
            polyak_tau,
            huber_kappa,
            grad_steps,
            eval_every,
            gru_hidden,
            hidden_layers,
            twin_critic
        );
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return report(&CliError::Usage(e.to_string().trim().to_string()), None),
    };
    let name = command_name(&cli.command);
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e, Some(name)),
    }
}

fn report(e: &CliError, command: Option<&str>) -> ExitCode {
    let body = serde_json::json!({
        "error": e.kind(),
        "command": command,
        "message": e.to_string(),
    });
    eprintln!("{body}");
    ExitCode::from(e.exit_code())
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::GenTraces { .. } => "gen-traces",
        Command::Collect { .. } => "collect",
        Command::Dataset(_) => "dataset build",
        Command::Train(_) => "train",
        Command::TrainBc(_) => "train-bc",
        Command::Eval { .. } => "eval",
        Command::Compare { .. } => "compare",
        Command::Drift { .. } => "drift",
        Command::Oracle { .. } => "oracle",
    }
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(j) = cli.jobs {
        cfg.jobs = j;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    match &cli.command {
        Command::GenTraces { n_traces, duration_ms } => {
            if let Some(n) = n_traces {
                cfg.corpus.n_traces = *n;
            }
            if let Some(d) = duration_ms {
                cfg.corpus.duration_ms = *d;
            }
        }
        Command::Collect { manifest, .. } | Command::Eval { manifest, .. } => {
            if let Some(m) = manifest {
                cfg.manifest = Some(m.clone());
            }
        }
        Command::Train(a) | Command::TrainBc(a) => a.apply(&mut cfg.train),
        Command::Drift { threshold: Some(t), .. } => cfg.drift_threshold = *t,
        _ => {}
    }
    cfg.train.seed = cfg.seed;
    cfg.train.validate().map_err(|e| CliError::Config(e.to_string()))?;
    cfg.sim.validate().map_err(|e| CliError::Config(e.to_string()))?;
    cfg.population.validate().map_err(CliError::Config)?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build_global()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    fs::create_dir_all(&cfg.out).map_err(|e| CliError::io(&cfg.out, e))?;
    cfg.freeze()?;
    match &cli.command {
        Command::GenTraces { .. } => gen_traces(&cfg),
        Command::Collect { controller, .. } => collect(&cfg, *controller),
        Command::Dataset(DatasetCommand::Build { logs }) => dataset_build(&cfg, logs),
        Command::Train(a) => train(&cfg, a, false),
        Command::TrainBc(a) => train(&cfg, a, true),
        Command::Eval { model, controller, .. } => eval(&cfg, model.as_deref(), *controller),
        Command::Compare { a, b } => compare_reports(&cfg, a, b),
        Command::Drift { a, b, .. } => drift(&cfg, a, b),
        Command::Oracle { trace, ref_log } => oracle(&cfg, trace, ref_log),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(serde_json::from_str(&text).map_err(Error::from)?)
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path).map_err(|e| CliError::io(path, e))?))
}

fn ensure_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

fn gen_traces(cfg: &RunConfig) -> Result<()> {
    let entries = gen_corpus(&cfg.corpus, cfg.seed)?;
    let dir = cfg.out.join("traces");
    ensure_dir(&dir)?;
    let mut manifest = Vec::with_capacity(entries.len());
    for e in &entries {
        let rel = PathBuf::from("traces").join(format!("{}.csv", e.trace.id));
        let path = cfg.out.join(&rel);
        fs::write(&path, e.trace.to_csv()).map_err(|err| CliError::io(&path, err))?;
        manifest.push(ManifestEntry {
            path: rel,
            rtt_ms: e.rtt_ms,
            seed: e.seed,
            tag: e.tag.clone(),
        });
    }
    let path = cfg.out.join("manifest.json");
    fs::write(&path, write_manifest(&manifest)).map_err(|e| CliError::io(&path, e))?;
    log::info!("wrote {} traces", entries.len());
    Ok(())
}

/// Loads a manifest; trace paths are relative to the manifest's directory.
fn load_corpus(cfg: &RunConfig) -> Result<Vec<CorpusEntry>> {
    let Some(mut path) = cfg.manifest.clone() else {
        return Err(CliError::Config("no manifest given (--manifest or `manifest` in the config)".into()));
    };
    if path.is_dir() {
        path = path.join("manifest.json");
    }
    let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
    let manifest = read_manifest(&text).map_err(Error::from)?;
    let root = path.parent().unwrap_or(Path::new("."));
    let mut entries = Vec::with_capacity(manifest.len());
    for m in manifest {
        let p = root.join(&m.path);
        let text = fs::read_to_string(&p).map_err(|e| CliError::io(&p, e))?;
        let id = p.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
        let trace = parse_trace_csv(&id, &text).map_err(Error::from)?;
        entries.push(CorpusEntry {
            trace,
            rtt_ms: m.rtt_ms,
            seed: m.seed,
            tag: m.tag,
        });
    }
    if entries.is_empty() {
        return Err(CliError::Config(format!("{} lists no traces", path.display())));
    }
    Ok(entries)
}

fn baseline_spec(cfg: &RunConfig, b: Baseline) -> ControllerSpec {
    match b {
        Baseline::Gcc => ControllerSpec::Gcc(cfg.gcc.clone()),
        Baseline::GccPopulation => ControllerSpec::Population {
            gcc: cfg.gcc.clone(),
            population: cfg.population.clone(),
        },
        Baseline::Oracle => ControllerSpec::Oracle {
            gcc: cfg.gcc.clone(),
            horizon_ms: cfg.oracle.horizon_ms,
            safety_factor: cfg.oracle.safety_factor,
        },
    }
}

fn collect(cfg: &RunConfig, controller: Baseline) -> Result<()> {
    let entries = load_corpus(cfg)?;
    let logs = run_corpus(&baseline_spec(cfg, controller), &entries, &cfg.sim)?;
    let dir = cfg.out.join("logs");
    ensure_dir(&dir)?;
    for log in &logs {
        write_session_log_file(log, &dir.join(format!("{}.json.gz", log.trace_id)))?;
    }
    log::info!("wrote {} session logs", logs.len());
    Ok(())
}

fn read_logs(dir: &Path) -> Result<Vec<SessionLog>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.to_string_lossy();
            name.ends_with(".json") || name.ends_with(".json.gz")
        })
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(CliError::Config(format!("no session logs in {}", dir.display())));
    }
    let mut logs = paths.iter().map(|p| read_at(p, read_session_log_file(p))).collect::<std::result::Result<Vec<_>, _>>()?;
    logs.sort_by(|a, b| a.trace_id.cmp(&b.trace_id));
    Ok(logs)
}

fn dataset_build(cfg: &RunConfig, logs: &Path) -> Result<()> {
    let logs = read_logs(logs)?;
    let ds = build_dataset(&logs, &cfg.normalizers, &cfg.reward);
    write_dataset_file(&ds, &cfg.out.join("dataset.bin"))?;
    log::info!("dataset with {} transitions from {} sessions", ds.len(), logs.len());
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    format_version: u32,
    method: &'a str,
    config_digest: String,
    dataset_transitions: usize,
    best_step: usize,
    best_val_median_reward: Option<f64>,
    policy_params: usize,
}

fn train(cfg: &RunConfig, args: &TrainArgs, bc: bool) -> Result<()> {
    let ds = read_at(&args.dataset, read_dataset_file(&args.dataset))?;
    let validation = match &args.val_manifest {
        Some(m) => {
            let vcfg = RunConfig {
                manifest: Some(m.clone()),
                ..cfg.clone()
            };
            let sessions = load_corpus(&vcfg)?
                .into_iter()
                .map(|e| {
                    let sim = e.sim_config(&cfg.sim);
                    (e.trace, sim)
                })
                .collect();
            Some(Validation {
                sessions,
                reward: cfg.reward,
            })
        }
        None => None,
    };
    let run = if bc { learner::bc_train } else { learner::train };
    let TrainOutcome {
        model,
        curve,
        best_step,
        best_val,
    } = run(&ds, &cfg.train, validation.as_ref()).map_err(Error::from)?;
    save_model_file(&model, args.with_critic, &cfg.out.join("model.bin"))?;
    let curve_path = cfg.out.join("curve.csv");
    write_curve_csv(&curve, create(&curve_path)?).map_err(|e| CliError::io(&curve_path, e))?;
    write_json(
        &cfg.out.join("train.json"),
        &TrainSummary {
            format_version: REPORT_FORMAT_VERSION,
            method: if bc { "bc" } else { "cql" },
            config_digest: config_digest(&cfg.train),
            dataset_transitions: ds.len(),
            best_step,
            best_val_median_reward: best_val,
            policy_params: model.policy_param_count(),
        },
    )
}

fn eval(cfg: &RunConfig, model: Option<&Path>, controller: Option<Baseline>) -> Result<()> {
    let entries = load_corpus(cfg)?;
    let spec = match (model, controller) {
        (Some(m), None) => ControllerSpec::Policy(Box::new(read_at(m, load_model_file(m))?)),
        (None, Some(b)) => baseline_spec(cfg, b),
        _ => return Err(CliError::Config("give exactly one of --model and --controller".into())),
    };
    let report = evaluate(&spec, &entries, &cfg.sim)?;
    write_json(&cfg.out.join("report.json"), &report)?;
    let csv = cfg.out.join("per_trace.csv");
    report.write_per_trace_csv(create(&csv)?).map_err(|e| CliError::io(&csv, e))
}

fn compare_reports(cfg: &RunConfig, a: &Path, b: &Path) -> Result<()> {
    let ra: EvalReport = read_json(a)?;
    let rb: EvalReport = read_json(b)?;
    let cmp = compare(&ra.summary, &rb.summary);
    write_json(&cfg.out.join("comparison.json"), &cmp)?;
    let csv = cfg.out.join("comparison.csv");
    cmp.write_csv(create(&csv)?).map_err(|e| CliError::io(&csv, e))
}

fn drift(cfg: &RunConfig, a: &Path, b: &Path) -> Result<()> {
    let da = read_at(a, read_dataset_file(a))?;
    let db = read_at(b, read_dataset_file(b))?;
    let report = drift_score(&da, &db, cfg.drift_threshold).map_err(Error::from)?;
    write_json(&cfg.out.join("drift.json"), &report)?;
    println!("{}", serde_json::to_string(&report).map_err(Error::from)?);
    Ok(())
}

#[derive(Serialize)]
struct OracleSummary {
    format_version: u32,
    config_digest: String,
    trace_id: String,
    qoe: ratelab::eval::QoEReport,
}

fn oracle(cfg: &RunConfig, trace: &Path, ref_log: &Path) -> Result<()> {
    let text = fs::read_to_string(trace).map_err(|e| CliError::io(trace, e))?;
    let id = trace.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let trace = parse_trace_csv(&id, &text).map_err(Error::from)?;
    let reference = read_at(ref_log, read_session_log_file(ref_log))?;
    let mut oc = OracleConfig::from_log(&reference).map_err(Error::from)?;
    oc.horizon_ms = cfg.oracle.horizon_ms;
    oc.safety_factor = cfg.oracle.safety_factor;
    oc.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let digest = config_digest(&(&oc, &reference.config));
    let mut ctl = OracleController::new(trace.clone(), oc).map_err(Error::from)?;
    let log = run_session(&trace, &mut ctl, &reference.config).map_err(Error::from)?;
    write_session_log_file(&log, &cfg.out.join(format!("{id}.oracle.json.gz")))?;
    write_json(
        &cfg.out.join("oracle.json"),
        &OracleSummary {
            format_version: REPORT_FORMAT_VERSION,
            config_digest: digest,
            trace_id: id,
            qoe: qoe(&log),
        },
    )
}
