//! Incident corpus files, synthetic fixtures and the retrospective
//! validation harness.
//!
//! A corpus file is UTF-8 newline-delimited JSON. The first line is the
//! header `{"iss_corpus":1}`; every following non-blank line is one
//! incident record.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{IssError, Result};
use crate::risk_model::{assemble_risk_vector, Category, IncidentRecord, RiskVector, SubComponentTriple};
use crate::scoring::{iss_polynomial, sigmoid, weighted_linear, weighted_multiplicative, ModelParams};
use crate::stakeholder::{
    aggregate_stakeholder_weights, consensus_dimension_weights, score_under, sensitivity_analysis,
    weight_disagreement, DisagreementReport, Pipeline, StakeholderPanel, CONVENTION_NOTE,
    DEFAULT_DISAGREEMENT_TAU,
};
use crate::scoring::SimplexWeights;
use crate::threshold::{
    classify_enforcement, evaluate_triggers, phase_from_months, EnforcementTier, Level, ScoreHistory,
    ThresholdSchedule, TierAssessment, TriggerReport,
};

pub const CORPUS_SCHEMA_VERSION: u64 = 1;

#[derive(Serialize, Deserialize)]
struct CorpusHeader {
    iss_corpus: u64,
}

/// An in-memory corpus that renders to the canonical file form.
#[derive(Debug, Clone, PartialEq)]
pub struct CorpusFile {
    pub records: Vec<IncidentRecord>,
}

impl CorpusFile {
    pub fn new(records: Vec<IncidentRecord>) -> Result<Self> {
        let mut seen = HashSet::new();
        for (i, r) in records.iter().enumerate() {
            if !seen.insert(r.id.as_str()) {
                return Err(IssError::DuplicateId { line: i + 2, id: r.id.clone() });
            }
        }
        Ok(CorpusFile { records })
    }

    /// Canonical text: header, one compact JSON record per line, trailing newline.
    pub fn to_canonical_string(&self) -> String {
        let mut out = serde_json::to_string(&CorpusHeader { iss_corpus: CORPUS_SCHEMA_VERSION })
            .expect("header serializes");
        out.push('\n');
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_canonical_string())?;
        Ok(())
    }
}

pub fn parse_corpus(text: &str) -> Result<Vec<IncidentRecord>> {
    let mut lines = text.lines().enumerate();
    let header = loop {
        match lines.next() {
            Some((_, l)) if l.trim().is_empty() => continue,
            Some((i, l)) => break (i + 1, l),
            None => return Err(IssError::Parse { line: 1, message: "missing corpus header".into() }),
        }
    };
    let parsed: CorpusHeader = serde_json::from_str(header.1).map_err(|e| IssError::Parse {
        line: header.0,
        message: format!("invalid corpus header: {e}"),
    })?;
    if parsed.iss_corpus != CORPUS_SCHEMA_VERSION {
        return Err(IssError::SchemaVersion { found: parsed.iss_corpus, expected: CORPUS_SCHEMA_VERSION });
    }

    let mut records = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let line_no = i + 1;
        let rec: IncidentRecord = serde_json::from_str(line).map_err(|e| IssError::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if !seen.insert(rec.id.clone()) {
            return Err(IssError::DuplicateId { line: line_no, id: rec.id });
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<IncidentRecord>> {
    parse_corpus(&std::fs::read_to_string(path)?)
}

/// Profiles the fixture generator cycles through, in order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeverityProfile {
    Low,
    Medium,
    High,
}

impl SeverityProfile {
    fn outcome(self) -> &'static str {
        match self {
            SeverityProfile::Low => "no action taken",
            SeverityProfile::Medium => "regulatory review opened",
            SeverityProfile::High => "deployment suspended",
        }
    }
}

/// Ground-truth model used to label synthetic incidents.
///
/// Bias -4.5, every linear coefficient 1.5, and pairwise interactions of 0.5
/// between electoral and opinion manipulation and between surveillance and
/// institutional capture.
pub fn planted_fixture_model() -> ModelParams {
    let d = 7;
    let mut inter = vec![0.0; d * d];
    let pairs = [(Category::Elec, Category::Manip), (Category::Surv, Category::Capture)];
    for (a, b) in pairs {
        inter[a as usize * d + b as usize] = 0.5;
        inter[b as usize * d + a as usize] = 0.5;
    }
    ModelParams::new(vec![1.5; d], inter, -4.5).expect("finite planted model")
}

fn fixture_triple(profile: SeverityProfile, rng: &mut ChaCha8Rng) -> SubComponentTriple {
    let mut v = [0.0; 3];
    match profile {
        // nothing measured, or a single spike
        SeverityProfile::Low => {
            if rng.random_bool(0.5) {
                let slot = rng.random_range(0..3);
                v[slot] = rng.random_range(0.05..0.4);
            }
        }
        // two comparable components
        SeverityProfile::Medium => {
            let skip = rng.random_range(0..3);
            let a: f64 = rng.random_range(0.3..0.7);
            let b = a * rng.random_range(0.8..1.0);
            let mut vals = [a, b].into_iter();
            for (i, slot) in v.iter_mut().enumerate() {
                if i != skip {
                    *slot = vals.next().unwrap();
                }
            }
        }
        // all three high
        SeverityProfile::High => {
            for slot in &mut v {
                *slot = rng.random_range(0.6..1.0);
            }
        }
    }
    SubComponentTriple::equal(v).expect("values drawn inside [0, 1]")
}

/// Deterministic synthetic corpus of `n` incidents cycling through low,
/// medium and high severity profiles, labeled by [`planted_fixture_model`].
pub fn generate_fixtures(seed: u64, n: usize) -> Result<CorpusFile> {
    if n == 0 {
        return Err(IssError::validation("n", "fixture count must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let planted = planted_fixture_model();
    let start = Utc.with_ymd_and_hms(2025, 1, 1, 0, 0, 0).unwrap();
    let profiles = [SeverityProfile::Low, SeverityProfile::Medium, SeverityProfile::High];
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let profile = profiles[i % 3];
        let categories: BTreeMap<Category, SubComponentTriple> = Category::ALL
            .iter()
            .map(|c| (*c, fixture_triple(profile, &mut rng)))
            .collect();
        let mut metadata = BTreeMap::new();
        metadata.insert("profile".to_string(), format!("{profile:?}").to_lowercase());
        metadata.insert("outcome".to_string(), profile.outcome().to_string());
        metadata.insert("source".to_string(), format!("synthetic fixture seed={seed}"));
        let mut rec = IncidentRecord::new(
            format!("fx-{seed}-{i:04}"),
            start + Duration::days(7 * i as i64),
            categories,
            None,
            metadata,
        )?;
        let f = assemble_risk_vector(&rec);
        rec.label = Some(sigmoid(planted.logit(&f)?));
        records.push(rec);
    }
    CorpusFile::new(records)
}

/// Phase assignment for incidents in a retrospective run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseSpec {
    Fixed(f64),
    /// `t = clamp(months since start / 72, 0, 1)` from each incident's timestamp.
    RoadmapStart(DateTime<Utc>),
}

impl PhaseSpec {
    pub fn phase_for(&self, incident: &IncidentRecord) -> f64 {
        match self {
            PhaseSpec::Fixed(t) => t.clamp(0.0, 1.0),
            PhaseSpec::RoadmapStart(start) => {
                let days = (incident.timestamp - *start).num_seconds() as f64 / 86_400.0;
                phase_from_months(days / (365.25 / 12.0))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedPanel {
    pub name: String,
    pub panel: StakeholderPanel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrospectiveConfig {
    pub corpus: PathBuf,
    pub weightings: Vec<NamedPanel>,
    pub schedule: ThresholdSchedule,
    pub phase: PhaseSpec,
    pub params: ModelParams,
    pub golden: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    corpus: PathBuf,
    weightings: Vec<WeightingEntry>,
    #[serde(default)]
    schedule: Option<ThresholdSchedule>,
    #[serde(default)]
    schedule_path: Option<PathBuf>,
    #[serde(default)]
    phase: Option<PhaseSpec>,
    #[serde(default)]
    params: Option<ModelParams>,
    #[serde(default)]
    params_path: Option<PathBuf>,
    #[serde(default)]
    golden: Option<PathBuf>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct WeightingEntry {
    name: String,
    #[serde(default)]
    panel: Option<StakeholderPanel>,
    #[serde(default)]
    panel_path: Option<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(IssError::from)
}

impl RetrospectiveConfig {
    /// Read a config file; relative paths inside it resolve against its directory.
    ///
    /// Missing `schedule` means the default table, missing `phase` means
    /// `t = 0`, and missing `params` means zero parameters over seven dimensions.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let raw: ConfigFile = read_json(path)?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

        let mut weightings = Vec::with_capacity(raw.weightings.len());
        for w in raw.weightings {
            let panel = match (w.panel, w.panel_path) {
                (Some(p), None) => p,
                (None, Some(p)) => read_json(&resolve(p))?,
                _ => {
                    return Err(IssError::validation(
                        format!("weightings.{}", w.name),
                        "exactly one of `panel` or `panel_path` is required",
                    ))
                }
            };
            weightings.push(NamedPanel { name: w.name, panel });
        }
        let schedule = match (raw.schedule, raw.schedule_path) {
            (Some(s), _) => s,
            (None, Some(p)) => read_json(&resolve(p))?,
            (None, None) => ThresholdSchedule::default(),
        };
        let params = match (raw.params, raw.params_path) {
            (Some(p), _) => p,
            (None, Some(p)) => read_json(&resolve(p))?,
            (None, None) => ModelParams::zeros(7),
        };
        let cfg = RetrospectiveConfig {
            corpus: resolve(raw.corpus),
            weightings,
            schedule,
            phase: raw.phase.unwrap_or(PhaseSpec::Fixed(0.0)),
            params,
            golden: raw.golden.map(resolve),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weightings.is_empty() {
            return Err(IssError::validation("weightings", "at least one weighting configuration is required"));
        }
        let mut names = HashSet::new();
        for w in &self.weightings {
            if !names.insert(w.name.as_str()) {
                return Err(IssError::validation("weightings", format!("duplicate name `{}`", w.name)));
            }
            if w.panel.dimension() != 7 {
                return Err(IssError::dimension(format!("weightings.{}.proposals", w.name), 7, w.panel.dimension()));
            }
        }
        if self.params.dimension() != 7 {
            return Err(IssError::dimension("params", 7, self.params.dimension()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightingSummary {
    pub name: String,
    pub stakeholder_weights: SimplexWeights,
    pub consensus_weights: SimplexWeights,
    pub disagreement: DisagreementReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightingEvaluation {
    pub weighting: String,
    pub linear: f64,
    pub multiplicative: f64,
    /// Polynomial score on inputs rescaled by the consensus weights.
    pub reweighted_polynomial: f64,
    pub reweighted_tier: EnforcementTier,
    pub stakeholder_range: (f64, f64),
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeComparison {
    pub recommendation: String,
    pub recorded_outcome: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentEvaluation {
    pub id: String,
    pub timestamp: DateTime<Utc>,
    pub t: f64,
    pub risk_vector: RiskVector,
    pub label: Option<f64>,
    pub polynomial: f64,
    pub enforcement: TierAssessment,
    pub triggers: TriggerReport,
    pub weightings: Vec<WeightingEvaluation>,
    pub comparison: OutcomeComparison,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrospectiveReport {
    pub convention: String,
    pub schedule: ThresholdSchedule,
    pub weightings: Vec<WeightingSummary>,
    pub incidents: Vec<IncidentEvaluation>,
}

impl RetrospectiveReport {
    /// Pretty JSON with a trailing newline; stable for identical inputs.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Retrospective validation: {} incident(s), {} weighting(s)", self.incidents.len(), self.weightings.len());
        for w in &self.weightings {
            let _ = writeln!(
                out,
                "  weighting {:<20} max proposal variance {:.4}{}",
                w.name,
                w.disagreement.max_variance,
                if w.disagreement.flagged { " (disagreement)" } else { "" }
            );
        }
        let _ = writeln!(out);
        let _ = writeln!(out, "{:<14} {:>5} {:>8} {:>9} {:<8} {}", "incident", "t", "ISS", "tier", "fired", "recorded outcome");
        for inc in &self.incidents {
            let fired: Vec<String> = inc
                .triggers
                .levels
                .iter()
                .filter(|l| !l.fired_modes.is_empty())
                .map(|l| l.level.to_string())
                .collect();
            let _ = writeln!(
                out,
                "{:<14} {:>5.2} {:>8.4} {:>9} {:<8} {}",
                inc.id,
                inc.t,
                inc.polynomial,
                inc.enforcement.tier,
                if fired.is_empty() { "-".to_string() } else { fired.join(",") },
                inc.comparison.recorded_outcome.as_deref().unwrap_or("(none recorded)")
            );
            for w in &inc.weightings {
                let _ = writeln!(
                    out,
                    "    {:<20} linear {:.4}  multiplicative {:.4}  reweighted {:.4} ({})  range [{:.4}, {:.4}]{}",
                    w.weighting,
                    w.linear,
                    w.multiplicative,
                    w.reweighted_polynomial,
                    w.reweighted_tier,
                    w.stakeholder_range.0,
                    w.stakeholder_range.1,
                    if w.stable { "" } else { " unstable" }
                );
            }
        }
        out
    }
}

fn recommendation(tier: EnforcementTier, highest: Option<Level>) -> String {
    let trigger = match highest {
        Some(level) => format!("level {level} ({})", level.intervention()),
        None => "no intervention".to_string(),
    };
    format!("enforcement tier {tier}; {trigger}")
}

/// Run the retrospective workflow on a config, loading its corpus.
pub fn retrospective_run(cfg: &RetrospectiveConfig) -> Result<RetrospectiveReport> {
    let incidents = load_corpus(&cfg.corpus)?;
    retrospective_on(&incidents, cfg)
}

/// Run the retrospective workflow on already-loaded incidents, in input order.
///
/// For every incident: assemble the risk vector, score it canonically and
/// under each weighting, evaluate triggers against the scores of the
/// incidents before it, and pair the recommendation with the recorded
/// outcome (`metadata.outcome`).
pub fn retrospective_on(incidents: &[IncidentRecord], cfg: &RetrospectiveConfig) -> Result<RetrospectiveReport> {
    cfg.validate()?;
    let mut summaries = Vec::with_capacity(cfg.weightings.len());
    for w in &cfg.weightings {
        let omega = aggregate_stakeholder_weights(&w.panel)?;
        let consensus = consensus_dimension_weights(&w.panel, &omega)?;
        summaries.push(WeightingSummary {
            name: w.name.clone(),
            stakeholder_weights: omega,
            consensus_weights: consensus,
            disagreement: weight_disagreement(&w.panel, DEFAULT_DISAGREEMENT_TAU),
        });
    }

    let mut history = ScoreHistory::default();
    let mut evaluations = Vec::with_capacity(incidents.len());
    for inc in incidents {
        let eval = evaluate_incident(inc, cfg, &summaries, &history).map_err(|e| e.for_incident(&inc.id))?;
        history.push(eval.polynomial).map_err(|e| e.for_incident(&inc.id))?;
        evaluations.push(eval);
    }
    Ok(RetrospectiveReport {
        convention: CONVENTION_NOTE.to_string(),
        schedule: cfg.schedule,
        weightings: summaries,
        incidents: evaluations,
    })
}

fn evaluate_incident(
    inc: &IncidentRecord,
    cfg: &RetrospectiveConfig,
    summaries: &[WeightingSummary],
    history: &ScoreHistory,
) -> Result<IncidentEvaluation> {
    let f = assemble_risk_vector(inc);
    let t = cfg.phase.phase_for(inc);
    let polynomial = iss_polynomial(&f, &cfg.params)?;
    let tier = classify_enforcement(polynomial)?;
    let triggers = evaluate_triggers(polynomial, history, t, &cfg.schedule)?;

    let mut weightings = Vec::with_capacity(cfg.weightings.len());
    for (w, summary) in cfg.weightings.iter().zip(summaries) {
        let reweighted = score_under(&f, &summary.consensus_weights, &cfg.params, Pipeline::LearnedReweighted)?;
        let sens = sensitivity_analysis(&f, &w.panel, &cfg.params, &cfg.schedule, t)?;
        weightings.push(WeightingEvaluation {
            weighting: w.name.clone(),
            linear: weighted_linear(&f, &summary.consensus_weights)?,
            multiplicative: weighted_multiplicative(&f, &summary.consensus_weights)?,
            reweighted_polynomial: reweighted,
            reweighted_tier: classify_enforcement(reweighted)?,
            stakeholder_range: sens.range,
            stable: sens.stable,
        });
    }

    Ok(IncidentEvaluation {
        id: inc.id.clone(),
        timestamp: inc.timestamp,
        t,
        label: inc.label,
        polynomial,
        enforcement: tier.into(),
        comparison: OutcomeComparison {
            recommendation: recommendation(tier, triggers.highest_fired()),
            recorded_outcome: inc.metadata.get("outcome").cloned(),
        },
        triggers,
        weightings,
        risk_vector: f,
    })
}

/// Compare a report against a golden file byte-for-byte.
pub fn matches_golden(report: &RetrospectiveReport, golden: impl AsRef<Path>) -> Result<bool> {
    let expected = std::fs::read(golden)?;
    Ok(report.to_json().as_bytes() == expected.as_slice())
}
