//! Command-line front end.

use std::collections::HashMap;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use confgate_core::action::{parse_action, Action};
use confgate_core::engine::{
    write_episode_logs, Agent, AgentDecision, EpisodeConfig, EpisodeLog, EpisodeOutcome, Intervener, OracleAgent,
    OracleIntervener, ReplayMode, ScriptedAgent, ScriptedIntervener, DEFAULT_STEP_CAP,
};
use confgate_core::forge::{build_dpo_dataset, write_triplets, ForgeConfig, ScoredAction, StepPredictor, DEFAULT_K, DEFAULT_LAMBDA};
use confgate_core::loss::run_gradient_check;
use confgate_core::metrics::{compute_report, render_table, MatchRule, ScreenSize, DEFAULT_CLICK_TOLERANCE};
use confgate_core::queue::{InterventionQueue, QueueEvent, QueueIntervener};
use confgate_core::retrieval::{apply_sidecar, load_sidecar, HashedTokenEncoder, RetrievalIndex};
use confgate_core::score::Gamma;
use confgate_core::sweep::{gamma_sweep, run_dataset_adaptive, run_dataset_automated, RunSettings, SweepRow};
use confgate_core::trajectory::{load_dataset, Dataset, StepRef, TrajectoryStep};
use serde::Deserialize;

use crate::error::CliError;
use crate::server;

pub const ADDR_ENV: &str = "CONFGATE_ADDR";
pub const DEFAULT_ADDR: &str = "127.0.0.1:8080";

#[derive(Debug, Parser)]
#[command(name = "confgate", version, about = "Confidence-gated GUI agent harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print "trajectories screens goals" for a dataset.
    Stats { dataset: PathBuf },
    /// Run one episode per trajectory and write episode logs.
    Run(RunArgs),
    /// Run the gated loop at each γ and emit the sensitivity CSV.
    Sweep(SweepArgs),
    /// Build the preference dataset for confidence correction.
    Forge(ForgeArgs),
    /// Verify loss gradients against finite differences.
    Losscheck(LossArgs),
    /// Compute metrics from episode logs.
    Report(ReportArgs),
    /// Start the HTTP service. The listen address comes from CONFGATE_ADDR.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Args)]
pub struct MatchArgs {
    /// Screen size as WIDTHxHEIGHT, used for coordinate matching.
    #[arg(long, default_value = "1080x2400")]
    pub screen: ScreenSize,
    /// Click tolerance as a fraction of the screen diagonal.
    #[arg(long, default_value_t = DEFAULT_CLICK_TOLERANCE)]
    pub click_tolerance: f64,
}

impl MatchArgs {
    pub fn rule(&self) -> MatchRule {
        MatchRule {
            screen: Some(self.screen),
            click_tolerance: self.click_tolerance,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    TeacherForcing,
    Strict,
}

impl From<ModeArg> for ReplayMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::TeacherForcing => ReplayMode::TeacherForcing,
            ModeArg::Strict => ReplayMode::Strict,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EpisodeArgs {
    pub dataset: PathBuf,
    /// `recorded` (the dataset's prediction columns), `oracle`, or
    /// `scripted:<predictions.jsonl>`.
    #[arg(long, default_value = "recorded")]
    pub agent: String,
    /// `oracle`, `queue` (answer requests on stdin), or
    /// `scripted:<actions.jsonl>`.
    #[arg(long, default_value = "oracle")]
    pub intervener: String,
    #[arg(long, default_value_t = DEFAULT_STEP_CAP)]
    pub step_cap: usize,
    #[arg(long, value_enum, default_value = "teacher-forcing")]
    pub mode: ModeArg,
    /// Seconds an intervention request waits before expiring (queue mode).
    #[arg(long, default_value_t = 300)]
    pub ttl_secs: u64,
    #[command(flatten)]
    pub matching: MatchArgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub episode: EpisodeArgs,
    /// Intervention threshold; omit for the fully automated loop.
    #[arg(long)]
    pub gamma: Option<i64>,
    /// Output file for episode logs (JSONL); stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub episode: EpisodeArgs,
    /// Inclusive range `a..b` or a comma list.
    #[arg(long, default_value = "0..5")]
    pub gammas: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ForgeArgs {
    pub dataset: PathBuf,
    #[arg(long, default_value_t = DEFAULT_K)]
    pub k: usize,
    #[arg(long, default_value_t = DEFAULT_LAMBDA, allow_hyphen_values = true)]
    pub lambda: f64,
    #[arg(long)]
    pub gamma: i64,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub include_self: bool,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub dedupe: bool,
    /// SFT predictions as `{trajectory_id, step_index, action, confidence}`
    /// JSONL; the dataset's prediction columns when omitted.
    #[arg(long)]
    pub predictions: Option<PathBuf>,
    /// Sidecar embedding file replacing inline vectors.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Output JSONL; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LossArgs {
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.1)]
    pub beta: f64,
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    /// Include every trial in the JSON report.
    #[arg(long)]
    pub trials: bool,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ReportFormat {
    Json,
    Table,
    Both,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Episode log files (JSONL).
    #[arg(required = true)]
    pub logs: Vec<PathBuf>,
    #[arg(long)]
    pub gamma: i64,
    /// Human demonstration step count, for relative efficiency.
    #[arg(long)]
    pub human_steps: Option<u64>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: ReportFormat,
    #[command(flatten)]
    pub matching: MatchArgs,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    pub dataset: PathBuf,
    /// Directory for per-episode append-only logs.
    #[arg(long, default_value = "episodes")]
    pub log_dir: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub gamma: i64,
    #[arg(long, default_value_t = DEFAULT_STEP_CAP)]
    pub step_cap: usize,
    #[arg(long, default_value_t = 300)]
    pub ttl_secs: u64,
    #[arg(long, value_enum, default_value = "teacher-forcing")]
    pub mode: ModeArg,
    #[command(flatten)]
    pub matching: MatchArgs,
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path).map(BufReader::new).map_err(|source| CliError::File {
        path: path.display().to_string(),
        source,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path).map(BufWriter::new).map_err(|source| CliError::File {
        path: path.display().to_string(),
        source,
    })
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    Ok(load_dataset(open(path)?)?)
}

/// Parses `a..b` (inclusive) or `a,b,c`.
pub fn parse_gammas(raw: &str) -> Result<Vec<Gamma>, CliError> {
    let bad = || CliError::Usage(format!("--gammas expects `a..b` or a comma list, got {raw:?}"));
    let values: Vec<i64> = match raw.split_once("..") {
        Some((a, b)) => {
            let a: i64 = a.trim().parse().map_err(|_| bad())?;
            let b: i64 = b.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
            if a > b {
                return Err(bad());
            }
            (a..=b).collect()
        }
        None => raw
            .split(',')
            .map(|v| v.trim().parse().map_err(|_| bad()))
            .collect::<Result<_, _>>()?,
    };
    Ok(values.into_iter().map(Gamma::new).collect::<Result<_, _>>()?)
}

pub fn make_agent(spec: &str, dataset: &Dataset) -> Result<Box<dyn Agent>, CliError> {
    match spec.split_once(':') {
        None if spec == "recorded" => Ok(Box::new(ScriptedAgent::from_dataset(dataset))),
        None if spec == "oracle" => Ok(Box::new(OracleAgent::from_dataset(dataset))),
        Some(("scripted", path)) => {
            let agent = ScriptedAgent::from_prediction_log(open(Path::new(path))?).map_err(CliError::Input)?;
            Ok(Box::new(agent))
        }
        _ => Err(CliError::Usage(format!(
            "--agent expects recorded, oracle or scripted:<file>, got {spec:?}"
        ))),
    }
}

#[derive(Debug, Deserialize)]
struct ScriptedAction {
    trajectory_id: String,
    step_index: usize,
    action: String,
}

fn read_scripted_actions(path: &Path) -> Result<HashMap<StepRef, Action>, CliError> {
    let mut out = HashMap::new();
    for (i, line) in open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: ScriptedAction =
            serde_json::from_str(&line).map_err(|e| CliError::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        let action =
            parse_action(&r.action).map_err(|e| CliError::Input(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.insert(StepRef::new(r.trajectory_id, r.step_index), action);
    }
    Ok(out)
}

/// Answers queued requests from stdin: each line is the action for the
/// oldest open request. Requests are announced on stderr as JSON.
fn terminal_queue(ttl: Duration) -> Arc<InterventionQueue> {
    let queue = Arc::new(InterventionQueue::new(ttl));
    queue.subscribe(|event| {
        if let QueueEvent::Requested(r) = event {
            eprintln!("{}", serde_json::json!({ "intervention_requested": r }));
        }
    });
    let q = Arc::clone(&queue);
    std::thread::spawn(move || {
        for line in io::stdin().lock().lines() {
            let Ok(line) = line else { break };
            let open = q
                .list(None)
                .into_iter()
                .find(|r| matches!(r.state, confgate_core::queue::RequestState::Pending | confgate_core::queue::RequestState::Claimed));
            let Some(request) = open else {
                eprintln!("{}", serde_json::json!({ "error": "NoOpenRequest", "message": "no request is waiting" }));
                continue;
            };
            if request.state == confgate_core::queue::RequestState::Pending {
                let _ = q.claim(&request.request_id, "terminal");
            }
            if let Err(e) = q.resolve(&request.request_id, line.trim()) {
                eprintln!("{}", serde_json::json!({ "error": "MalformedAction", "message": e.to_string() }));
            }
        }
    });
    queue
}

pub fn make_intervener(spec: &str, ttl: Duration) -> Result<Box<dyn Intervener>, CliError> {
    match spec.split_once(':') {
        None if spec == "oracle" => Ok(Box::new(OracleIntervener)),
        None if spec == "queue" => Ok(Box::new(QueueIntervener::new(terminal_queue(ttl)))),
        Some(("scripted", path)) => Ok(Box::new(ScriptedIntervener::new(read_scripted_actions(Path::new(path))?))),
        _ => Err(CliError::Usage(format!(
            "--intervener expects oracle, queue or scripted:<file>, got {spec:?}"
        ))),
    }
}

fn settings(args: &EpisodeArgs) -> Result<RunSettings, CliError> {
    if args.step_cap == 0 {
        return Err(CliError::Usage("--step-cap must be positive".into()));
    }
    Ok(RunSettings {
        config: EpisodeConfig { step_cap: args.step_cap },
        mode: args.mode.into(),
        rule: args.matching.rule(),
    })
}

fn run(args: RunArgs) -> Result<(), CliError> {
    let dataset = read_dataset(&args.episode.dataset)?;
    let settings = settings(&args.episode)?;
    let mut agent = make_agent(&args.episode.agent, &dataset)?;
    let logs: Vec<EpisodeLog> = match args.gamma {
        None => run_dataset_automated(&dataset, &mut agent, &settings),
        Some(g) => {
            let gamma = Gamma::new(g)?;
            let mut intervener = make_intervener(&args.episode.intervener, Duration::from_secs(args.episode.ttl_secs))?;
            run_dataset_adaptive(&dataset, &mut agent, &mut intervener, gamma, &settings)
                .into_iter()
                .map(EpisodeOutcome::into_log)
                .collect()
        }
    };
    let mut out = output(args.out.as_deref())?;
    write_episode_logs(&mut out, &logs)?;
    out.flush()?;
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<(), CliError> {
    let dataset = read_dataset(&args.episode.dataset)?;
    let settings = settings(&args.episode)?;
    let gammas = parse_gammas(&args.gammas)?;
    // Validate specs once up front so errors surface before any run.
    make_agent(&args.episode.agent, &dataset)?;
    let ttl = Duration::from_secs(args.episode.ttl_secs);
    make_intervener(&args.episode.intervener, ttl)?;
    let results = gamma_sweep(
        &dataset,
        gammas,
        || make_agent(&args.episode.agent, &dataset).expect("validated above"),
        || make_intervener(&args.episode.intervener, ttl).expect("validated above"),
        &settings,
    )?;
    let mut w = csv::Writer::from_writer(output(args.out.as_deref())?);
    for (report, _) in &results {
        w.serialize(SweepRow::from(report))?;
    }
    w.flush()?;
    Ok(())
}

/// Predictions keyed by step, from a prediction log or the dataset columns.
struct TablePredictor(HashMap<StepRef, Result<ScoredAction, String>>);

impl StepPredictor for TablePredictor {
    fn predict(&mut self, step: &TrajectoryStep) -> Result<ScoredAction, String> {
        self.0
            .get(&step.step_ref())
            .cloned()
            .unwrap_or_else(|| Err(format!("no prediction for step {}", step.step_ref())))
    }
}

fn forge(args: ForgeArgs) -> Result<(), CliError> {
    let mut dataset = read_dataset(&args.dataset)?;
    if let Some(path) = &args.embeddings {
        let (dim, vectors) = load_sidecar(open(path)?)?;
        apply_sidecar(&mut dataset, dim, &vectors)?;
    }
    let mut cfg = ForgeConfig::new(Gamma::new(args.gamma)?, args.lambda, args.k)?;
    cfg.include_self = args.include_self;
    cfg.dedupe = args.dedupe;

    let agent = match &args.predictions {
        Some(path) => ScriptedAgent::from_prediction_log(open(path)?).map_err(CliError::Input)?,
        None => ScriptedAgent::from_dataset(&dataset),
    };
    let table = dataset
        .steps()
        .filter_map(|s| {
            let r = s.step_ref();
            let out = agent.get(&r)?;
            let scored = AgentDecision::try_from(out).map(|d| ScoredAction {
                action: d.action,
                score: d.confidence,
            });
            Some((r, scored))
        })
        .collect();
    let index = RetrievalIndex::from_dataset(&dataset, &HashedTokenEncoder::default())?;
    let result = build_dpo_dataset(dataset.steps(), &mut TablePredictor(table), &index, &cfg)?;

    let mut out = output(args.out.as_deref())?;
    write_triplets(&mut out, &result.triplets)?;
    out.flush()?;
    let summary = serde_json::json!({
        "anchors": result.anchors,
        "mismatched_anchors": result.mismatched_anchors,
        "triplets": result.triplets.len(),
        "failures": result.failures,
    });
    eprintln!("{summary}");
    Ok(())
}

fn losscheck(args: LossArgs) -> Result<(), CliError> {
    let mut report = run_gradient_check(args.count, args.seed, args.beta, args.h, args.tolerance)?;
    if !args.trials {
        report.trials.clear();
    }
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    if report.passed {
        eprintln!("PASS");
        Ok(())
    } else {
        Err(CliError::GradCheck {
            worst_sft: report.worst_sft,
            worst_dpo: report.worst_dpo,
        })
    }
}

fn report(args: ReportArgs) -> Result<(), CliError> {
    let mut logs = Vec::new();
    for path in &args.logs {
        logs.extend(confgate_core::engine::read_episode_logs(open(path)?)?);
    }
    let report = compute_report(&logs, Gamma::new(args.gamma)?, args.human_steps, &args.matching.rule())?;
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    match args.format {
        ReportFormat::Json => println!("{json}"),
        ReportFormat::Table => print!("{}", render_table(&report)),
        ReportFormat::Both => {
            println!("{json}");
            print!("{}", render_table(&report));
        }
    }
    Ok(())
}

fn serve(args: ServeArgs) -> Result<(), CliError> {
    let dataset = read_dataset(&args.dataset)?;
    if args.step_cap == 0 {
        return Err(CliError::Usage("--step-cap must be positive".into()));
    }
    let config = server::ServerConfig {
        dataset,
        log_dir: args.log_dir,
        ttl: Duration::from_secs(args.ttl_secs),
        default_gamma: Gamma::new(args.gamma)?,
        step_cap: args.step_cap,
        mode: args.mode.into(),
        rule: args.matching.rule(),
    };
    let addr = std::env::var(ADDR_ENV).unwrap_or_else(|_| DEFAULT_ADDR.to_string());
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let state = server::AppState::new(config)?;
        let listener = tokio::net::TcpListener::bind(&addr).await?;
        eprintln!("{}", serde_json::json!({ "listening": listener.local_addr()?.to_string() }));
        server::serve(listener, state).await?;
        Ok(())
    })
}

pub fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Stats { dataset } => {
            println!("{}", read_dataset(&dataset)?.stats());
            Ok(())
        }
        Command::Run(a) => run(a),
        Command::Sweep(a) => sweep(a),
        Command::Forge(a) => forge(a),
        Command::Losscheck(a) => losscheck(a),
        Command::Report(a) => report(a),
        Command::Serve(a) => serve(a),
    }
}

/// Entry point: parses `args`, runs, and returns the process exit code.
/// Failures print `{"error":..,"message":..}` on stderr.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let body = crate::error::ErrorBody {
                error: "Usage",
                message: e.render().to_string().trim().to_string(),
            };
            eprintln!("{}", serde_json::to_string(&body).expect("error serializes"));
            return 2;
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.body()).expect("error serializes"));
            1
        }
    }
}
