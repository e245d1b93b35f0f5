//! Request and response bodies, and the pure functions that turn one into
//! the other. The CLI's `--json` output is produced by the same functions.

use serde::{Deserialize, Serialize};

use iss_core::corpus::{retrospective_on, NamedPanel, PhaseSpec, RetrospectiveConfig, RetrospectiveReport};
use iss_core::learning::{mean_absolute_error, StopReason, TraceRow};
use iss_core::scoring::{weighted_linear, weighted_multiplicative};
use iss_core::stakeholder::{sensitivity_analysis_with, SensitivityOptions, DEFAULT_DISAGREEMENT_TAU};
use iss_core::threshold::TierAssessment;
use iss_core::{
    aggregate_stakeholder_weights, assemble_risk_vector, classify_enforcement, consensus_dimension_weights,
    evaluate_triggers, fit, iss_linear, iss_multiplicative, iss_polynomial, smoothstep, stakeholder_utility,
    threshold_at, weight_disagreement, DisagreementReport, FourFactor, IncidentRecord, IssError, Level, ModelParams,
    Result, RiskVector, ScoreHistory, SensitivityReport, SimplexWeights, StakeholderGroup, StakeholderPanel,
    ThresholdSchedule, TrainingConfig, TrainingDataset, TriggerReport, CONVENTION_NOTE,
};

/// Server-side fallbacks used when a request omits params or schedule.
#[derive(Debug, Clone, Default)]
pub struct EngineDefaults {
    pub params: Option<ModelParams>,
    pub schedule: ThresholdSchedule,
}

impl EngineDefaults {
    /// Request params, else the configured params if they fit `d`, else zeros.
    pub fn params_for(&self, requested: Option<&ModelParams>, d: usize) -> ModelParams {
        if let Some(p) = requested {
            return p.clone();
        }
        match &self.params {
            Some(p) if p.dimension() == d => p.clone(),
            _ => ModelParams::zeros(d),
        }
    }

    pub fn schedule_for(&self, requested: Option<&ThresholdSchedule>) -> ThresholdSchedule {
        requested.copied().unwrap_or(self.schedule)
    }
}

pub fn check_phase(t: f64) -> Result<f64> {
    if !t.is_finite() || !(0.0..=1.0).contains(&t) {
        return Err(IssError::validation("t", format!("{t} is outside [0, 1]")));
    }
    Ok(t)
}

// ---- score ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourFactorInput {
    pub factors: FourFactor,
    pub weights: SimplexWeights,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreRequest {
    pub incident: IncidentRecord,
    #[serde(default)]
    pub params: Option<ModelParams>,
    #[serde(default)]
    pub schedule: Option<ThresholdSchedule>,
    #[serde(default)]
    pub t: f64,
    /// Past scores, oldest first, for the population trigger.
    #[serde(default)]
    pub history: Vec<f64>,
    /// Weights for the classic scores over the seven categories; uniform if absent.
    #[serde(default)]
    pub weights: Option<SimplexWeights>,
    #[serde(default)]
    pub four_factor: Option<FourFactorInput>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourFactorScores {
    pub linear: f64,
    pub multiplicative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreResponse {
    pub id: String,
    pub risk_vector: RiskVector,
    pub weights: SimplexWeights,
    pub linear: f64,
    pub multiplicative: f64,
    pub polynomial: f64,
    pub enforcement: TierAssessment,
    pub triggers: TriggerReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub four_factor: Option<FourFactorScores>,
    pub convention: String,
}

pub fn score(req: &ScoreRequest, defaults: &EngineDefaults) -> Result<ScoreResponse> {
    let t = check_phase(req.t)?;
    let f = assemble_risk_vector(&req.incident);
    let d = f.dimension();
    let weights = req.weights.clone().unwrap_or_else(|| SimplexWeights::uniform(d));
    let params = defaults.params_for(req.params.as_ref(), d);
    let schedule = defaults.schedule_for(req.schedule.as_ref());
    let history = ScoreHistory::from_scores(&req.history).map_err(|e| e.in_field("history"))?;

    let polynomial = iss_polynomial(&f, &params)?;
    let four_factor = match &req.four_factor {
        Some(ff) => Some(FourFactorScores {
            linear: iss_linear(&ff.factors, &ff.weights)?,
            multiplicative: iss_multiplicative(&ff.factors, &ff.weights)?,
        }),
        None => None,
    };
    Ok(ScoreResponse {
        id: req.incident.id.clone(),
        linear: weighted_linear(&f, &weights)?,
        multiplicative: weighted_multiplicative(&f, &weights)?,
        polynomial,
        enforcement: classify_enforcement(polynomial)?.into(),
        triggers: evaluate_triggers(polynomial, &history, t, &schedule)?,
        four_factor,
        weights,
        risk_vector: f,
        convention: CONVENTION_NOTE.to_string(),
    })
}

// ---- weights ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregateRequest {
    pub panel: StakeholderPanel,
    #[serde(default)]
    pub tau: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupUtility {
    pub group: StakeholderGroup,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResponse {
    pub utilities: Vec<GroupUtility>,
    pub stakeholder_weights: SimplexWeights,
    pub consensus_weights: SimplexWeights,
    pub disagreement: DisagreementReport,
}

fn check_tau(tau: Option<f64>) -> Result<f64> {
    let tau = tau.unwrap_or(DEFAULT_DISAGREEMENT_TAU);
    if tau.is_nan() || tau < 0.0 {
        return Err(IssError::validation("tau", "must be >= 0"));
    }
    Ok(tau)
}

pub fn aggregate(req: &AggregateRequest) -> Result<AggregateResponse> {
    let tau = check_tau(req.tau)?;
    let utilities = req
        .panel
        .profiles()
        .iter()
        .map(|p| Ok(GroupUtility { group: p.group, utility: stakeholder_utility(p)? }))
        .collect::<Result<Vec<_>>>()?;
    let omega = aggregate_stakeholder_weights(&req.panel)?;
    Ok(AggregateResponse {
        utilities,
        consensus_weights: consensus_dimension_weights(&req.panel, &omega)?,
        stakeholder_weights: omega,
        disagreement: weight_disagreement(&req.panel, tau),
    })
}

// ---- sensitivity ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensitivityRequest {
    /// Seven-category incident; mutually exclusive with `factors`.
    #[serde(default)]
    pub incident: Option<IncidentRecord>,
    /// A raw risk vector of any dimension (four means the classic pipeline).
    #[serde(default)]
    pub factors: Option<Vec<f64>>,
    pub panel: StakeholderPanel,
    #[serde(default)]
    pub params: Option<ModelParams>,
    #[serde(default)]
    pub schedule: Option<ThresholdSchedule>,
    #[serde(default)]
    pub t: f64,
    #[serde(default)]
    pub tau: Option<f64>,
    #[serde(default)]
    pub classic_multiplicative: bool,
}

pub fn risk_vector_of(incident: Option<&IncidentRecord>, factors: Option<&Vec<f64>>) -> Result<RiskVector> {
    match (incident, factors) {
        (Some(inc), None) => Ok(assemble_risk_vector(inc)),
        (None, Some(f)) => RiskVector::new(f.clone()).map_err(|e| e.in_field("factors")),
        _ => Err(IssError::validation("incident", "exactly one of `incident` or `factors` is required")),
    }
}

pub fn sensitivity(req: &SensitivityRequest, defaults: &EngineDefaults) -> Result<SensitivityReport> {
    let t = check_phase(req.t)?;
    let f = risk_vector_of(req.incident.as_ref(), req.factors.as_ref())?;
    let params = defaults.params_for(req.params.as_ref(), f.dimension());
    let schedule = defaults.schedule_for(req.schedule.as_ref());
    let opts = SensitivityOptions {
        tau: check_tau(req.tau)?,
        classic_multiplicative: req.classic_multiplicative,
    };
    sensitivity_analysis_with(&f, &req.panel, &params, &schedule, t, &opts)
}

// ---- thresholds ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelThreshold {
    pub level: Level,
    pub intervention: String,
    pub severity_threshold: f64,
    pub probability_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdsResponse {
    pub t: f64,
    pub phase_weight: f64,
    pub levels: Vec<LevelThreshold>,
}

pub fn thresholds(t: f64, schedule: &ThresholdSchedule) -> Result<ThresholdsResponse> {
    let t = check_phase(t)?;
    let levels = Level::ALL
        .iter()
        .map(|&level| {
            let (s, a) = threshold_at(level, t, schedule);
            LevelThreshold {
                level,
                intervention: level.intervention().to_string(),
                severity_threshold: s,
                probability_threshold: a,
            }
        })
        .collect();
    Ok(ThresholdsResponse { t, phase_weight: smoothstep(t), levels })
}

// ---- train ----

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledRow {
    pub f: Vec<f64>,
    pub y: f64,
}

/// Exactly one data source: a corpus path (service: relative to its corpus
/// directory), inline incidents, or inline rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainRequest {
    #[serde(default)]
    pub corpus: Option<String>,
    #[serde(default)]
    pub incidents: Option<Vec<IncidentRecord>>,
    #[serde(default)]
    pub rows: Option<Vec<LabeledRow>>,
    #[serde(default)]
    pub config: TrainingConfig,
    /// Fraction of rows held out for evaluation; none by default.
    #[serde(default)]
    pub holdout_fraction: Option<f64>,
    #[serde(default)]
    pub split_seed: u64,
}

impl TrainRequest {
    /// Dataset from the inline sources; `None` when the request names a corpus path.
    pub fn inline_dataset(&self) -> Result<Option<TrainingDataset>> {
        let sources = [self.corpus.is_some(), self.incidents.is_some(), self.rows.is_some()];
        if sources.iter().filter(|s| **s).count() != 1 {
            return Err(IssError::validation(
                "corpus",
                "exactly one of `corpus`, `incidents` or `rows` is required",
            ));
        }
        if let Some(incidents) = &self.incidents {
            return TrainingDataset::from_incidents(incidents).map(Some);
        }
        if let Some(rows) = &self.rows {
            let d = rows.first().map(|r| r.f.len()).unwrap_or(0);
            let xs: Vec<Vec<f64>> = rows.iter().map(|r| r.f.clone()).collect();
            let ys: Vec<f64> = rows.iter().map(|r| r.y).collect();
            return TrainingDataset::from_slices(d, &xs, &ys).map(Some);
        }
        Ok(None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainResult {
    pub params: ModelParams,
    pub stop: StopReason,
    pub iterations: usize,
    pub final_loss: f64,
    pub train_rows: usize,
    pub train_mae: f64,
    pub holdout_rows: usize,
    pub holdout_mae: Option<f64>,
    pub trace: Vec<TraceRow>,
}

pub fn train(data: &TrainingDataset, req: &TrainRequest) -> Result<TrainResult> {
    let (train_set, holdout) = match req.holdout_fraction {
        Some(frac) => {
            let (a, b) = data.split(frac, req.split_seed)?;
            (a, Some(b))
        }
        None => (data.clone(), None),
    };
    let (params, trace) = fit(&train_set, &req.config)?;
    Ok(TrainResult {
        stop: trace.stop,
        iterations: trace.iterations(),
        final_loss: trace.final_loss(),
        train_rows: train_set.len(),
        train_mae: mean_absolute_error(&train_set, &params)?,
        holdout_rows: holdout.as_ref().map_or(0, |h| h.len()),
        holdout_mae: holdout.as_ref().map(|h| mean_absolute_error(h, &params)).transpose()?,
        trace: trace.rows,
        params,
    })
}

// ---- retrospective ----

/// Inline retrospective run: incidents and weightings in the body.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InlineRetrospective {
    pub incidents: Vec<IncidentRecord>,
    pub weightings: Vec<NamedPanel>,
    #[serde(default)]
    pub schedule: Option<ThresholdSchedule>,
    #[serde(default)]
    pub phase: Option<PhaseSpec>,
    #[serde(default)]
    pub params: Option<ModelParams>,
}

pub fn retrospective_inline(req: &InlineRetrospective, defaults: &EngineDefaults) -> Result<RetrospectiveReport> {
    let cfg = RetrospectiveConfig {
        corpus: Default::default(),
        weightings: req.weightings.clone(),
        schedule: defaults.schedule_for(req.schedule.as_ref()),
        phase: req.phase.clone().unwrap_or(PhaseSpec::Fixed(0.0)),
        params: defaults.params_for(req.params.as_ref(), 7),
        golden: None,
    };
    retrospective_on(&req.incidents, &cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub version: String,
}

pub fn health() -> Health {
    Health { status: "ok".into(), version: iss_core::ENGINE_VERSION.into() }
}
