//! `iss` command-line interface. Every subcommand's `--json` output is the
//! same body the HTTP service returns for the matching route.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use iss_core::corpus::{generate_fixtures, load_corpus, parse_corpus, retrospective_run, RetrospectiveConfig};
use iss_core::threshold::PopulationStatus;
use iss_core::{
    precautionary_resolution, DeliberationStatus, IncidentRecord, IssError, Level, ModelParams, SensitivityReport,
    SimplexWeights, StakeholderPanel, ThresholdSchedule, TrainingConfig, TrainingDataset,
};
use iss_service::bodies::{self, EngineDefaults, FourFactorInput};
use iss_service::ServiceConfig;

/// Which subcommand reaches the computation behind each service route.
pub const ROUTE_SUBCOMMANDS: &[(&str, &str, &str)] = &[
    ("POST", "/v1/score", "score"),
    ("POST", "/v1/weights/aggregate", "weights"),
    ("POST", "/v1/sensitivity", "sensitivity"),
    ("POST", "/v1/train", "train"),
    ("GET", "/v1/train/{id}", "train"),
    ("GET", "/v1/thresholds", "thresholds"),
    ("POST", "/v1/retrospective", "retrospective"),
    ("POST", "/v1/sessions", "sensitivity"),
    ("GET", "/v1/sessions/{id}", "sensitivity"),
    ("POST", "/v1/sessions/{id}/rounds", "sensitivity"),
    ("GET", "/v1/health", "serve"),
];

#[derive(Debug, Parser)]
#[command(name = "iss", version, about = "Incident severity scoring engine")]
pub struct Cli {
    /// Emit JSON bodies identical to the HTTP service instead of tables.
    #[arg(long, global = true)]
    pub json: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score an incident (JSON record) or every incident in a corpus file.
    Score(ScoreArgs),
    /// Fit the polynomial scorer on a labeled corpus.
    Train(TrainArgs),
    /// Aggregate a stakeholder panel into weights.
    Weights(WeightsArgs),
    /// Per-stakeholder sensitivity report; several panels act as deliberation rounds.
    Sensitivity(SensitivityArgs),
    /// Print the threshold schedule at a phase.
    Thresholds(ThresholdsArgs),
    /// Run the retrospective validation harness.
    Retrospective(RetrospectiveArgs),
    /// Generate a deterministic synthetic corpus.
    Fixtures(FixturesArgs),
    /// Start the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Model parameters JSON; zeros when absent.
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Threshold schedule JSON; the default table when absent.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    /// Implementation phase in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    pub t: f64,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long)]
    pub incident: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    /// JSON array of past scores, oldest first.
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// Classic weights over the seven categories, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub weights: Option<Vec<f64>>,
    /// Classic factors impact,exploitability,replicability,exposure.
    #[arg(long, value_delimiter = ',', requires = "four_factor_weights")]
    pub four_factor: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',')]
    pub four_factor_weights: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Training configuration JSON; defaults when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[arg(long)]
    pub holdout: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub split_seed: u64,
}

#[derive(Debug, Args)]
pub struct WeightsArgs {
    #[arg(long)]
    pub panel: PathBuf,
    #[arg(long)]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ResolveMode {
    Consensus,
    Precautionary,
}

#[derive(Debug, Args)]
pub struct SensitivityArgs {
    #[arg(long, conflicts_with = "factors", required_unless_present = "factors")]
    pub incident: Option<PathBuf>,
    /// Raw risk vector, comma separated; four entries select the classic pipeline.
    #[arg(long, value_delimiter = ',')]
    pub factors: Option<Vec<f64>>,
    /// Panel JSON; repeat for successive deliberation rounds.
    #[arg(long, required = true)]
    pub panel: Vec<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Use the multiplicative classic pipeline for four-factor vectors.
    #[arg(long)]
    pub multiplicative: bool,
    /// Close the rounds: adopt the consensus, or apply the precautionary default.
    #[arg(long, value_enum)]
    pub resolve: Option<ResolveMode>,
}

#[derive(Debug, Args)]
pub struct ThresholdsArgs {
    #[arg(long, default_value_t = 0.0)]
    pub t: f64,
    #[arg(long)]
    pub level: Option<Level>,
    #[arg(long)]
    pub schedule: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RetrospectiveArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Write the JSON report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fail unless the report matches the config's golden file byte-for-byte.
    #[arg(long)]
    pub check_golden: bool,
}

#[derive(Debug, Args)]
pub struct FixturesArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub n: usize,
    /// Output corpus path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long, env = "ISS_LISTEN", default_value = "127.0.0.1:8080")]
    pub listen: SocketAddr,
    #[arg(long, env = "ISS_CORPUS_DIR")]
    pub corpus_dir: Option<PathBuf>,
    #[arg(long, env = "ISS_PARAMS")]
    pub params: Option<PathBuf>,
    #[arg(long, env = "ISS_SCHEDULE")]
    pub schedule: Option<PathBuf>,
    #[arg(long, env = "ISS_SESSION_DIR")]
    pub session_dir: Option<PathBuf>,
    #[arg(long, env = "ISS_TOKEN", hide_env_values = true)]
    pub token: Option<String>,
}

#[derive(Debug)]
pub enum CliError {
    Engine(IssError),
    /// Input was readable but rejected, e.g. a golden mismatch.
    Rejected(String),
}

impl From<IssError> for CliError {
    fn from(e: IssError) -> Self {
        CliError::Engine(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Engine(e.into())
    }
}

impl CliError {
    /// 1 for validation failures, 2 for runtime failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Engine(e) if !e.is_validation() => 2,
            _ => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Engine(e) => write!(f, "{e}"),
            CliError::Rejected(m) => f.write_str(m),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

pub fn command() -> clap::Command {
    Cli::command()
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| io_context(path, e))?;
    serde_json::from_str(&text).map_err(|e| IssError::validation(path.display().to_string(), e.to_string()).into())
}

fn io_context(path: &Path, e: std::io::Error) -> CliError {
    CliError::Engine(IssError::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn defaults(model: &ModelArgs) -> CliResult<EngineDefaults> {
    Ok(EngineDefaults {
        params: model.params.as_deref().map(read_json::<ModelParams>).transpose()?,
        schedule: match &model.schedule {
            Some(p) => read_json(p)?,
            None => ThresholdSchedule::default(),
        },
    })
}

fn emit_json<T: Serialize>(out: &mut dyn Write, body: &T) -> CliResult {
    let text = serde_json::to_string_pretty(body).map_err(IssError::from)?;
    writeln!(out, "{text}")?;
    Ok(())
}

fn read_incidents(path: &Path) -> CliResult<(Vec<IncidentRecord>, bool)> {
    let text = fs::read_to_string(path).map_err(|e| io_context(path, e))?;
    if text.trim_start().starts_with("{\"iss_corpus\"") {
        return Ok((parse_corpus(&text)?, true));
    }
    let inc: IncidentRecord =
        serde_json::from_str(&text).map_err(|e| IssError::validation(path.display().to_string(), e.to_string()))?;
    Ok((vec![inc], false))
}

fn fmt_levels(levels: &[Level]) -> String {
    if levels.is_empty() {
        "-".into()
    } else {
        levels.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(",")
    }
}

fn score(args: &ScoreArgs, json: bool, out: &mut dyn Write) -> CliResult {
    let defaults = defaults(&args.model)?;
    let history: Vec<f64> = args.history.as_deref().map(read_json).transpose()?.unwrap_or_default();
    let weights = args.weights.clone().map(SimplexWeights::new).transpose()?;
    let four_factor = match (&args.four_factor, &args.four_factor_weights) {
        (Some(f), Some(w)) => {
            if f.len() != 4 {
                return Err(IssError::dimension("four-factor", 4, f.len()).into());
            }
            Some(FourFactorInput {
                factors: iss_core::FourFactor::new(f[0], f[1], f[2], f[3])?,
                weights: SimplexWeights::new(w.clone())?,
            })
        }
        _ => None,
    };
    let (incidents, is_corpus) = read_incidents(&args.incident)?;
    let mut responses = Vec::with_capacity(incidents.len());
    for incident in incidents {
        let req = bodies::ScoreRequest {
            incident,
            params: None,
            schedule: None,
            t: args.model.t,
            history: history.clone(),
            weights: weights.clone(),
            four_factor: four_factor.clone(),
        };
        responses.push(bodies::score(&req, &defaults)?);
    }
    if json {
        return if is_corpus { emit_json(out, &responses) } else { emit_json(out, &responses[0]) };
    }
    let mut s = String::new();
    let _ = writeln!(s, "{:<16} {:>8} {:>8} {:>8}  {:<9} {:<8} population", "incident", "linear", "mult", "poly", "tier", "fired");
    for r in &responses {
        let population = r
            .triggers
            .levels
            .iter()
            .map(|l| match l.population.status {
                PopulationStatus::InsufficientData => format!("{}:n/a", l.level),
                PopulationStatus::Fired { exceedance } => format!("{}:fired({exceedance:.3})", l.level),
                PopulationStatus::NotFired { exceedance } => format!("{}:no({exceedance:.3})", l.level),
            })
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(
            s,
            "{:<16} {:>8.4} {:>8.4} {:>8.4}  {:<9} {:<8} {population}",
            r.id,
            r.linear,
            r.multiplicative,
            r.polynomial,
            r.enforcement.tier.as_str(),
            fmt_levels(&r.triggers.incident_levels()),
        );
        if let Some(ff) = &r.four_factor {
            let _ = writeln!(s, "{:<16} four-factor linear {:.4} multiplicative {:.4}", "", ff.linear, ff.multiplicative);
        }
    }
    out.write_all(s.as_bytes())?;
    Ok(())
}

fn train(args: &TrainArgs, json: bool, out: &mut dyn Write) -> CliResult {
    let config: TrainingConfig = args.config.as_deref().map(read_json).transpose()?.unwrap_or_default();
    let incidents = load_corpus(&args.corpus)?;
    let data = TrainingDataset::from_incidents(&incidents)?;
    let req = bodies::TrainRequest {
        corpus: Some(args.corpus.display().to_string()),
        incidents: None,
        rows: None,
        config,
        holdout_fraction: args.holdout,
        split_seed: args.split_seed,
    };
    let result = bodies::train(&data, &req)?;
    if let Some(path) = &args.out {
        let text = serde_json::to_string_pretty(&result.params).map_err(IssError::from)?;
        fs::write(path, text + "\n").map_err(|e| io_context(path, e))?;
    }
    if let Some(path) = &args.trace {
        let trace = iss_core::TrainingTrace { rows: result.trace.clone(), stop: result.stop };
        let file = fs::File::create(path).map_err(|e| io_context(path, e))?;
        trace.write_csv(file)?;
    }
    if json {
        return emit_json(out, &result);
    }
    writeln!(out, "rows           {} train, {} held out", result.train_rows, result.holdout_rows)?;
    writeln!(out, "iterations     {} ({:?})", result.iterations, result.stop)?;
    writeln!(out, "final loss     {:.6e}", result.final_loss)?;
    writeln!(out, "train MAE      {:.4}", result.train_mae)?;
    if let Some(mae) = result.holdout_mae {
        writeln!(out, "held-out MAE   {mae:.4}")?;
    }
    Ok(())
}

fn weights(args: &WeightsArgs, json: bool, out: &mut dyn Write) -> CliResult {
    let panel: StakeholderPanel = read_json(&args.panel)?;
    let body = bodies::aggregate(&bodies::AggregateRequest { panel, tau: args.tau })?;
    if json {
        return emit_json(out, &body);
    }
    writeln!(out, "{:<30} {:>9} {:>8}", "group", "utility", "weight")?;
    for (u, w) in body.utilities.iter().zip(body.stakeholder_weights.entries()) {
        writeln!(out, "{:<30} {:>9.4} {:>8.4}", u.group.as_str(), u.utility, w)?;
    }
    let consensus: Vec<String> = body.consensus_weights.entries().iter().map(|w| format!("{w:.4}")).collect();
    writeln!(out, "consensus weights  [{}]", consensus.join(", "))?;
    let d = &body.disagreement;
    writeln!(
        out,
        "max variance       {:.4} (tau {}){}",
        d.max_variance,
        d.tau,
        if d.flagged { " disagreement flagged" } else { "" }
    )?;
    Ok(())
}

#[derive(Serialize)]
struct Deliberation<'a> {
    rounds: &'a [SensitivityReport],
    #[serde(skip_serializing_if = "Option::is_none")]
    resolution: Option<iss_core::stakeholder::ResolvedScore>,
}

fn sensitivity(args: &SensitivityArgs, json: bool, out: &mut dyn Write) -> CliResult {
    let defaults = defaults(&args.model)?;
    let incident = match &args.incident {
        Some(p) => {
            let (mut incs, _) = read_incidents(p)?;
            if incs.len() != 1 {
                return Err(IssError::validation("incident", "expected exactly one incident").into());
            }
            incs.pop()
        }
        None => None,
    };
    let mut rounds = Vec::with_capacity(args.panel.len());
    for path in &args.panel {
        let req = bodies::SensitivityRequest {
            incident: incident.clone(),
            factors: args.factors.clone(),
            panel: read_json(path)?,
            params: None,
            schedule: None,
            t: args.model.t,
            tau: args.tau,
            classic_multiplicative: args.multiplicative,
        };
        rounds.push(bodies::sensitivity(&req, &defaults)?);
    }
    let resolution = match args.resolve {
        Some(ResolveMode::Consensus) => Some(precautionary_resolution(&rounds, DeliberationStatus::Resolved)?),
        Some(ResolveMode::Precautionary) => Some(precautionary_resolution(&rounds, DeliberationStatus::Unresolved)?),
        None => None,
    };
    if json {
        if rounds.len() == 1 && resolution.is_none() {
            return emit_json(out, &rounds[0]);
        }
        return emit_json(out, &Deliberation { rounds: &rounds, resolution });
    }
    for (n, r) in rounds.iter().enumerate() {
        if rounds.len() > 1 {
            writeln!(out, "round {n}")?;
        }
        writeln!(out, "{:<30} {:>8} {:>8}  {:<9} fired", "group", "weight", "score", "tier")?;
        for s in &r.per_stakeholder {
            writeln!(
                out,
                "{:<30} {:>8.4} {:>8.4}  {:<9} {}",
                s.group.as_str(),
                s.weight,
                s.score,
                s.tier.as_str(),
                fmt_levels(&s.incident_levels)
            )?;
        }
        writeln!(out, "consensus score {:.4} ({})", r.consensus_score, r.consensus_tier.as_str())?;
        writeln!(
            out,
            "range [{:.4}, {:.4}] {}; disagreement {}",
            r.range.0,
            r.range.1,
            if r.stable { "stable" } else { "unstable" },
            if r.disagreement.flagged { "flagged" } else { "not flagged" }
        )?;
    }
    if let Some(res) = resolution {
        writeln!(out, "resolved score {:.4} ({:?})", res.score, res.basis)?;
    }
    Ok(())
}

fn thresholds(args: &ThresholdsArgs, json: bool, out: &mut dyn Write) -> CliResult {
    let schedule: ThresholdSchedule = match &args.schedule {
        Some(p) => read_json(p)?,
        None => ThresholdSchedule::default(),
    };
    let body = bodies::thresholds(args.t, &schedule)?;
    if json {
        return emit_json(out, &body);
    }
    let rows: Vec<_> = body
        .levels
        .iter()
        .filter(|l| args.level.is_none_or(|want| want == l.level))
        .collect();
    if args.level.is_some() {
        for l in rows {
            writeln!(out, "s={} a={}", l.severity_threshold, l.probability_threshold)?;
        }
        return Ok(());
    }
    writeln!(out, "t={} phase weight {:.4}", body.t, body.phase_weight)?;
    for l in rows {
        writeln!(
            out,
            "{}  s={:<8} a={:<8} {}",
            l.level,
            format!("{:.4}", l.severity_threshold),
            format!("{:.4}", l.probability_threshold),
            l.intervention
        )?;
    }
    Ok(())
}

fn retrospective(args: &RetrospectiveArgs, json: bool, out: &mut dyn Write) -> CliResult {
    let cfg = RetrospectiveConfig::load(&args.config)?;
    let report = retrospective_run(&cfg)?;
    let text = report.to_json();
    if let Some(path) = &args.out {
        fs::write(path, &text).map_err(|e| io_context(path, e))?;
    }
    if args.check_golden {
        let golden = cfg
            .golden
            .as_ref()
            .ok_or_else(|| IssError::validation("golden", "config names no golden file"))?;
        let expected = fs::read_to_string(golden).map_err(|e| io_context(golden, e))?;
        if expected != text {
            return Err(CliError::Rejected(format!("report differs from golden file {}", golden.display())));
        }
    }
    if json {
        out.write_all(text.as_bytes())?;
    } else {
        out.write_all(report.to_text().as_bytes())?;
    }
    Ok(())
}

fn fixtures(args: &FixturesArgs, out: &mut dyn Write) -> CliResult {
    let corpus = generate_fixtures(args.seed, args.n)?;
    match &args.out {
        Some(path) => corpus.write(path)?,
        None => out.write_all(corpus.to_canonical_string().as_bytes())?,
    }
    Ok(())
}

fn serve(args: &ServeArgs) -> CliResult {
    let cfg = ServiceConfig {
        listen: Some(args.listen),
        corpus_dir: args.corpus_dir.clone(),
        params_path: args.params.clone(),
        schedule_path: args.schedule.clone(),
        session_dir: args.session_dir.clone(),
        token: args.token.clone(),
    };
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(iss_service::serve(cfg))?;
    Ok(())
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> CliResult {
    match &cli.command {
        Command::Score(a) => score(a, cli.json, out),
        Command::Train(a) => train(a, cli.json, out),
        Command::Weights(a) => weights(a, cli.json, out),
        Command::Sensitivity(a) => sensitivity(a, cli.json, out),
        Command::Thresholds(a) => thresholds(a, cli.json, out),
        Command::Retrospective(a) => retrospective(a, cli.json, out),
        Command::Fixtures(a) => fixtures(a, out),
        Command::Serve(a) => serve(a),
    }
}
