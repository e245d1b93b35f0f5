//! Phase-dependent intervention thresholds, rolling empirical-CDF triggers
//! and enforcement tiers.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{check_unit, IssError, Result};

/// Length of the implementation roadmap in months.
pub const ROADMAP_MONTHS: f64 = 72.0;

/// Cubic S-curve `3t^2 - 2t^3`. Inputs outside `[0, 1]` are clamped.
pub fn smoothstep(t: f64) -> f64 {
    let t = clamp_phase(t);
    t * t * (3.0 - 2.0 * t)
}

fn clamp_phase(t: f64) -> f64 {
    if t.is_nan() {
        log::warn!("phase is NaN; using 0");
        return 0.0;
    }
    if !(0.0..=1.0).contains(&t) {
        log::warn!("phase {t} outside [0, 1]; clamping");
    }
    t.clamp(0.0, 1.0)
}

/// Phase from elapsed months on the 72-month roadmap.
pub fn phase_from_months(months_elapsed: f64) -> f64 {
    (months_elapsed / ROADMAP_MONTHS).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    L,
    M,
    H,
}

impl Level {
    pub const ALL: [Level; 3] = [Level::L, Level::M, Level::H];

    pub fn intervention(self) -> &'static str {
        match self {
            Level::L => "enhanced monitoring",
            Level::M => "regulatory review",
            Level::H => "emergency response",
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Level::L => "L",
            Level::M => "M",
            Level::H => "H",
        })
    }
}

impl FromStr for Level {
    type Err = IssError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "L" | "LOW" => Ok(Level::L),
            "M" | "MODERATE" => Ok(Level::M),
            "H" | "HIGH" => Ok(Level::H),
            _ => Err(IssError::validation("level", format!("unknown level `{s}`"))),
        }
    }
}

/// Initial and mature-phase thresholds for one level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LevelThresholds {
    pub s_init: f64,
    pub s_full: f64,
    pub a_init: f64,
    pub a_full: f64,
}

impl LevelThresholds {
    fn validate(&self, level: Level) -> Result<()> {
        check_unit(&format!("{level}.s_init"), self.s_init)?;
        check_unit(&format!("{level}.s_full"), self.s_full)?;
        check_unit(&format!("{level}.a_init"), self.a_init)?;
        check_unit(&format!("{level}.a_full"), self.a_full)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ScheduleRepr", into = "ScheduleRepr")]
pub struct ThresholdSchedule {
    levels: [LevelThresholds; 3],
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScheduleRepr {
    #[serde(rename = "L")]
    low: LevelThresholds,
    #[serde(rename = "M")]
    moderate: LevelThresholds,
    #[serde(rename = "H")]
    high: LevelThresholds,
}

impl TryFrom<ScheduleRepr> for ThresholdSchedule {
    type Error = IssError;

    fn try_from(r: ScheduleRepr) -> Result<Self> {
        ThresholdSchedule::new(r.low, r.moderate, r.high)
    }
}

impl From<ThresholdSchedule> for ScheduleRepr {
    fn from(s: ThresholdSchedule) -> Self {
        let [low, moderate, high] = s.levels;
        ScheduleRepr { low, moderate, high }
    }
}

impl Default for ThresholdSchedule {
    fn default() -> Self {
        ThresholdSchedule {
            levels: [
                LevelThresholds { s_init: 0.2, s_full: 0.3, a_init: 0.1, a_full: 0.15 },
                LevelThresholds { s_init: 0.5, s_full: 0.6, a_init: 0.05, a_full: 0.1 },
                LevelThresholds { s_init: 0.8, s_full: 0.75, a_init: 0.01, a_full: 0.05 },
            ],
        }
    }
}

impl ThresholdSchedule {
    pub fn new(low: LevelThresholds, moderate: LevelThresholds, high: LevelThresholds) -> Result<Self> {
        low.validate(Level::L)?;
        moderate.validate(Level::M)?;
        high.validate(Level::H)?;
        Ok(ThresholdSchedule { levels: [low, moderate, high] })
    }

    pub fn level(&self, level: Level) -> &LevelThresholds {
        &self.levels[level as usize]
    }
}

/// Severity and probability thresholds of `level` at phase `t`.
pub fn threshold_at(level: Level, t: f64, schedule: &ThresholdSchedule) -> (f64, f64) {
    let phi = smoothstep(t);
    let lv = schedule.level(level);
    (
        (1.0 - phi) * lv.s_init + phi * lv.s_full,
        (1.0 - phi) * lv.a_init + phi * lv.a_full,
    )
}

/// Rolling window of past scores, newest last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreHistory {
    scores: VecDeque<f64>,
    window: usize,
    min_samples: usize,
}

impl Default for ScoreHistory {
    fn default() -> Self {
        ScoreHistory::new(500, 30).expect("valid defaults")
    }
}

impl ScoreHistory {
    pub fn new(window: usize, min_samples: usize) -> Result<Self> {
        if window == 0 || min_samples == 0 {
            return Err(IssError::validation("history", "window and min_samples must be positive"));
        }
        Ok(ScoreHistory { scores: VecDeque::with_capacity(window), window, min_samples })
    }

    /// Default window and sample floor, seeded with `scores` (oldest first).
    pub fn from_scores(scores: &[f64]) -> Result<Self> {
        let mut h = ScoreHistory::default();
        h.extend(scores.iter().copied())?;
        Ok(h)
    }

    pub fn push(&mut self, score: f64) -> Result<()> {
        check_unit("history score", score)?;
        if self.scores.len() == self.window {
            self.scores.pop_front();
        }
        self.scores.push_back(score);
        Ok(())
    }

    pub fn extend(&mut self, scores: impl IntoIterator<Item = f64>) -> Result<()> {
        scores.into_iter().try_for_each(|s| self.push(s))
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn min_samples(&self) -> usize {
        self.min_samples
    }

    pub fn scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.scores.iter().copied()
    }

    /// Immutable sorted view for repeated CDF queries.
    pub fn snapshot(&self) -> Ecdf {
        let mut sorted: Vec<f64> = self.scores.iter().copied().collect();
        sorted.sort_by(f64::total_cmp);
        Ecdf { sorted }
    }
}

/// Right-continuous empirical CDF over a sorted sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Ecdf {
    sorted: Vec<f64>,
}

impl Ecdf {
    pub fn len(&self) -> usize {
        self.sorted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sorted.is_empty()
    }

    /// Fraction of samples `<= s`.
    pub fn cdf(&self, s: f64) -> Result<f64> {
        if self.sorted.is_empty() {
            return Err(IssError::InsufficientData("score history is empty".into()));
        }
        let count = self.sorted.partition_point(|x| *x <= s);
        Ok(count as f64 / self.sorted.len() as f64)
    }
}

pub fn empirical_cdf(history: &ScoreHistory, s: f64) -> Result<f64> {
    history.snapshot().cdf(s)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum PopulationStatus {
    Fired { exceedance: f64 },
    NotFired { exceedance: f64 },
    InsufficientData,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationTrigger {
    pub mode: String,
    #[serde(flatten)]
    pub status: PopulationStatus,
}

impl PopulationTrigger {
    pub fn fired(&self) -> bool {
        matches!(self.status, PopulationStatus::Fired { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncidentTrigger {
    pub mode: String,
    pub fired: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelTrigger {
    pub level: Level,
    pub intervention: String,
    pub severity_threshold: f64,
    pub probability_threshold: f64,
    pub incident: IncidentTrigger,
    pub population: PopulationTrigger,
    /// Which modes fired: any of `"incident"`, `"population"`.
    pub fired_modes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerReport {
    pub t: f64,
    pub current: f64,
    pub history_size: usize,
    pub min_samples: usize,
    pub cold_start: bool,
    pub levels: Vec<LevelTrigger>,
}

impl TriggerReport {
    pub fn level(&self, level: Level) -> &LevelTrigger {
        self.levels.iter().find(|l| l.level == level).expect("all levels present")
    }

    /// Levels whose incident trigger fired, lowest first.
    pub fn incident_levels(&self) -> Vec<Level> {
        self.levels.iter().filter(|l| l.incident.fired).map(|l| l.level).collect()
    }

    /// Highest level fired under either mode.
    pub fn highest_fired(&self) -> Option<Level> {
        self.levels
            .iter()
            .filter(|l| !l.fired_modes.is_empty())
            .map(|l| l.level)
            .max()
    }
}

/// Evaluate population (rolling-CDF) and incident triggers for every level.
pub fn evaluate_triggers(
    current: f64,
    history: &ScoreHistory,
    t: f64,
    schedule: &ThresholdSchedule,
) -> Result<TriggerReport> {
    check_unit("current score", current)?;
    let ecdf = history.snapshot();
    let enough = ecdf.len() >= history.min_samples();
    let levels = Level::ALL
        .iter()
        .map(|&level| {
            let (s, a) = threshold_at(level, t, schedule);
            let incident_fired = current >= s;
            let status = if enough {
                let exceedance = 1.0 - ecdf.cdf(s).expect("non-empty history");
                if exceedance >= a {
                    PopulationStatus::Fired { exceedance }
                } else {
                    PopulationStatus::NotFired { exceedance }
                }
            } else {
                PopulationStatus::InsufficientData
            };
            let population = PopulationTrigger { mode: "population".into(), status };
            let mut fired_modes = Vec::new();
            if incident_fired {
                fired_modes.push("incident".to_string());
            }
            if population.fired() {
                fired_modes.push("population".to_string());
            }
            LevelTrigger {
                level,
                intervention: level.intervention().into(),
                severity_threshold: s,
                probability_threshold: a,
                incident: IncidentTrigger { mode: "incident".into(), fired: incident_fired },
                population,
                fired_modes,
            }
        })
        .collect();
    Ok(TriggerReport {
        t: clamp_phase(t),
        current,
        history_size: ecdf.len(),
        min_samples: history.min_samples(),
        cold_start: !enough,
        levels,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnforcementTier {
    None,
    Moderate,
    Extreme,
}

impl EnforcementTier {
    /// Enforcement measures available at this tier.
    pub fn actions(self) -> &'static [&'static str] {
        const MODERATE: [&str; 3] = [
            "require pre-deployment impact assessment with a 15-30 day stakeholder consultation period",
            "mandate design modifications including capability restrictions or alignment interventions",
            "impose operational monitoring requirements with regular compliance audits",
        ];
        const EXTREME: [&str; 4] = [
            "require pre-deployment impact assessment with a 15-30 day stakeholder consultation period",
            "mandate design modifications including capability restrictions or alignment interventions",
            "impose operational monitoring requirements with regular compliance audits",
            "issue temporary deployment suspension pending comprehensive review",
        ];
        match self {
            EnforcementTier::None => &[],
            EnforcementTier::Moderate => &MODERATE,
            EnforcementTier::Extreme => &EXTREME,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            EnforcementTier::None => "none",
            EnforcementTier::Moderate => "moderate",
            EnforcementTier::Extreme => "extreme",
        }
    }
}

impl fmt::Display for EnforcementTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Tier for a score: extreme above 0.8, moderate above 0.6. Boundaries do not escalate.
pub fn classify_enforcement(score: f64) -> Result<EnforcementTier> {
    check_unit("score", score)?;
    Ok(if score > 0.8 {
        EnforcementTier::Extreme
    } else if score > 0.6 {
        EnforcementTier::Moderate
    } else {
        EnforcementTier::None
    })
}

/// Tier plus its action list, as serialized in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierAssessment {
    pub tier: EnforcementTier,
    pub actions: Vec<String>,
}

impl From<EnforcementTier> for TierAssessment {
    fn from(tier: EnforcementTier) -> Self {
        TierAssessment {
            tier,
            actions: tier.actions().iter().map(|s| s.to_string()).collect(),
        }
    }
}
